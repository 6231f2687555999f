"""Command-line entry point: ``rtmodels <subcommand>``.

Exit codes: 0 success, 1 failed assertion or invalid input content, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path
from typing import Optional

from . import guard
from .dsl import check_rules
from .errors import RuntimeModelError
from .manager import HealingPolicy, load_scenario, make_world, run_self_healing
from .metamodels import build_source_metamodel, build_target_metamodel
from .sim.container import restore_container


class UsageError(Exception):
    pass


def _resolve(path: str) -> Path:
    """A path on disk, or failing that, a resource shipped inside the package (e.g. ``rules/ejb2comp.tgg``)."""
    p = Path(path)
    if p.exists():
        return p
    res = resources.files("rtmodels").joinpath(*Path(path).parts)
    if res.is_file():
        return Path(str(res))
    raise UsageError(f"no such file: {path}")


def _load_world(state: Optional[str], seed: int):
    if state and Path(state).exists():
        snap = json.loads(Path(state).read_text())
        return make_world(seed=seed, container=restore_container(snap, seed))
    return make_world(seed=seed)


def _save_world(world, state: Optional[str]):
    if state:
        Path(state).write_text(json.dumps(world.dump("container"), indent=2, sort_keys=True) + "\n")


def _emit(obj, fmt: str, out):
    if fmt == "json":
        out.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    else:
        _print_text(obj, out)


def _print_text(obj, out, indent=0):
    pad = "  " * indent
    if isinstance(obj, dict) and "uid" in obj and "type" in obj:
        attrs = ", ".join(f"{k}={v!r}" for k, v in obj.get("attrs", {}).items())
        out.write(f"{pad}{obj['type']} {obj['uid']} ({attrs})\n")
        for ref, vals in obj.get("refs", {}).items():
            for v in vals:
                if isinstance(v, dict):
                    _print_text(v, out, indent + 1)
                else:
                    out.write(f"{pad}  {ref} -> {v}\n")
    elif isinstance(obj, dict) and "elements" in obj:
        for e in obj["elements"]:
            _print_text(e, out, indent)
    else:
        out.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_run_scenario(args, out) -> int:
    path = _resolve(args.script)
    try:
        scenario = load_scenario(path.read_text())
    except (ValueError, json.JSONDecodeError) as ex:
        raise UsageError(f"{path}: {ex}")
    if args.seed is not None:
        scenario["seed"] = args.seed
    policy = HealingPolicy(args.threshold if args.threshold is not None else int(scenario.get("threshold", 3)))
    result = run_self_healing(scenario, policy)
    for s in result.steps:
        ops = "; ".join(f"{o['op']}({', '.join(f'{v}' for v in o['args'].values())})" for o in s["operations"])
        cmds = ", ".join(f"{c['kind']}({c['target']})" for c in (s["commands"] or {}).get("commands", []))
        out.write(f"step {s['index']}: {ops} -> [{cmds}]{' ERROR ' + s['error'] if s['error'] else ''}\n")
    for a in result.assertions:
        out.write(f"{'PASS' if a['passed'] else 'FAIL'} {a['name']}\n")
    if args.trace:
        Path(args.trace).write_text(json.dumps(result.trace(), indent=2, sort_keys=True) + "\n")
    return 0 if result.passed else 1


def cmd_dump(args, out) -> int:
    world = _load_world(args.state, args.seed)
    _emit(world.dump(args.which), args.format, out)
    return 0


def cmd_inject_failure(args, out) -> int:
    world = _load_world(args.state, args.seed)
    with guard.platform_zone():
        providers = sorted(m for m, rec in world.container.modules.items()
                           if rec.state == "STARTED"
                           and args.interface in world.container.template_of(m).provided())
        if args.module:
            providers = [m for m in providers if m == args.module]
        if not providers:
            raise UsageError(f"no started module provides {args.interface}")
        for _ in range(args.count):
            world.container.inject_call(providers[0], args.interface, args.exception)
    report = world.session.refresh()
    _emit(report.to_dict(), "json", out)
    _save_world(world, args.state)
    return 0


def cmd_sync(args, out) -> int:
    world = _load_world(args.state, args.seed)
    with guard.platform_zone():
        if args.direction == "fwd":
            world.adapter.pump_events()
            report = world.engine.synchronize("forward")
        else:
            report = world.engine.synchronize("backward")
            world.adapter.flush_commands()
    _emit(report.to_dict(), "json", out)
    return 0


def cmd_validate(args, out) -> int:
    path = _resolve(args.rules)
    doc, diags = check_rules(path.read_text(), build_source_metamodel(), build_target_metamodel())
    for d in diags:
        out.write(f"{args.rules}:{d.line}:{d.column}: {d.severity} {d.code}: {d.message}\n")
    if doc is None or any(d.severity == "error" for d in diags):
        return 1
    out.write(f"{len(doc.rules)} rules OK\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rtmodels", description="Runtime models for a simulated EJB platform.")
    p.add_argument("--seed", type=int, default=None, help="seed for the container's instance selection")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run-scenario", help="replay a self-healing scenario script")
    s.add_argument("script")
    s.add_argument("--threshold", type=int)
    s.add_argument("--trace", help="write the step log as JSON")
    s.set_defaults(func=cmd_run_scenario)

    s = sub.add_parser("dump", help="print a model or the container state")
    s.add_argument("--which", choices=("source", "target", "corr", "container"), default="target")
    s.add_argument("--format", choices=("json", "text"), default="json")
    s.add_argument("--state", help="container snapshot file to start from")
    s.set_defaults(func=cmd_dump)

    s = sub.add_parser("inject-failure", help="make calls through an interface fail")
    s.add_argument("interface")
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--exception", default="LookupFailure")
    s.add_argument("--module")
    s.add_argument("--state", help="container snapshot file to read and update")
    s.set_defaults(func=cmd_inject_failure)

    s = sub.add_parser("sync", help="run one synchronization pass")
    s.add_argument("--direction", choices=("fwd", "bwd"), default="fwd")
    s.add_argument("--state", help="container snapshot file to start from")
    s.set_defaults(func=cmd_sync)

    s = sub.add_parser("validate", help="parse and check a rule file")
    s.add_argument("rules")
    s.set_defaults(func=cmd_validate)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as ex:
        return int(ex.code or 0)
    if args.seed is None:
        args.seed = 0 if args.command != "run-scenario" else None
    if getattr(args, "threshold", None) is not None and args.threshold < 1:
        print("rtmodels: error: --threshold must be at least 1", file=sys.stderr)
        return 2
    if getattr(args, "count", 1) < 1:
        print("rtmodels: error: --count must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.func(args, out)
    except UsageError as ex:
        print(f"rtmodels: error: {ex}", file=sys.stderr)
        return 2
    except RuntimeModelError as ex:
        print(f"rtmodels: {type(ex).__name__}: {ex}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
