"""Self-healing autonomic manager and the scenario runner.

The manager only reads the target model and acts through an
:class:`~rtmodels.adaptation.AdaptationSession`; it runs inside
:func:`rtmodels.guard.manager_zone`, so any direct touch of the source model
or the container raises :class:`~rtmodels.errors.DirectAccessViolation`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

from . import guard
from .adaptation import AdaptationSession
from .dsl import load_builtin_rules
from .engine import SyncEngine
from .errors import NoAlternativeType
from .kernel import Model, to_dict
from .metamodels import build_target_metamodel
from .sim import CausalAdapter, Container
from .webshop import TEMPLATES, build_webshop_fixture

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HealingPolicy:
    failure_threshold: int = 3
    selection: str = "first-by-uid"

    def __post_init__(self):
        if not isinstance(self.failure_threshold, int) or self.failure_threshold < 1:
            raise ValueError("failure_threshold must be a positive integer")


@dataclass
class Diagnosis:
    interface: str       # faulty provided Interface
    component: str
    component_type: str
    interface_type: str  # InterfaceType name, e.g. IWarehousing
    failures: int


class SelfHealingManager:
    """Monitors failures in the target model and replaces the faulty component."""

    def __init__(self, session: AdaptationSession, policy: Optional[HealingPolicy] = None):
        self.session = session
        self.policy = policy or HealingPolicy()
        self.healed: list[dict] = []

    @property
    def target(self) -> Model:
        return self.session.target

    def analyze(self) -> Optional[Diagnosis]:
        t = self.target
        for iface in t.elements_of("Interface"):
            if iface.slot != "provided":
                continue
            total = sum(f.get("count") for f in t.children(iface, "failures"))
            if total >= self.policy.failure_threshold:
                comp = t.get(iface.parent)
                itype = t.get(iface.target("type")).get("name")
                return Diagnosis(iface.uid, comp.uid, comp.target("type"), itype, total)
        return None

    def alternative_for(self, d: Diagnosis) -> str:
        t = self.target
        for ct in t.elements_of("ComponentType"):
            if ct.uid == d.component_type:
                continue
            names = [it.get("name") for it in t.children(ct, "providedInterfaceTypes")]
            if d.interface_type in names:
                return ct.uid
        raise NoAlternativeType(f"no component type other than {d.component_type} provides {d.interface_type}")

    def heal(self, d: Diagnosis) -> dict:
        s, t = self.session, self.target
        alt = self.alternative_for(d)
        log.info("replacing %s (%d failures on %s) with an instance of %s",
                 d.component, d.failures, d.interface_type, alt)
        new = s.instantiate(alt)
        s.set_lifecycle(new, "DEPLOYED")
        s.set_lifecycle(new, "STARTED")
        new_pi = next(i.uid for i in t.children(new, "provided")
                      if t.get(i.target("type")).get("name") == d.interface_type)
        clients = [(c.uid, c.target("required")) for c in t.elements_of("Connector")
                   if c.target("provided") == d.interface]
        rewired = []
        with s.batch():
            for conn, req in clients:
                s.disconnect(conn)
                rewired.append(s.connect(req, new_pi))
        if t.get(d.component).get("state") == "STARTED":
            s.set_lifecycle(d.component, "DEPLOYED")
        s.set_lifecycle(d.component, "UNDEPLOYED")
        s.remove_component(d.component)
        if not any(c.target("type") == d.component_type for c in t.elements_of("Component")):
            s.remove_component_type(d.component_type)
        # the faulty component's Failure elements leave with it; the outcome keeps the tally
        outcome = {"faulty": d.component, "type": d.component_type, "failures": d.failures,
                   "interface_type": d.interface_type, "replacement": new,
                   "replacement_type": alt, "removed_connectors": [c for c, _ in clients],
                   "new_connectors": rewired}
        self.healed.append(outcome)
        return outcome

    def run_once(self) -> Optional[dict]:
        """One monitor/analyze/plan/execute round."""
        with guard.manager_zone():
            self.session.refresh()
            d = self.analyze()
            if d is None:
                return None
            return self.heal(d)


# -- worlds and scenarios -----------------------------------------------------

@dataclass
class World:
    container: Container
    adapter: CausalAdapter
    engine: SyncEngine
    session: AdaptationSession

    @property
    def source(self) -> Model:
        return self.adapter.source

    @property
    def target(self) -> Model:
        return self.engine.target

    def dump(self, which: str):
        with guard.platform_zone():
            if which == "source":
                return to_dict(self.source, ordered=True)
            if which == "target":
                return to_dict(self.target, ordered=True)
            if which == "corr":
                return self.engine.corr.to_list()
            if which == "container":
                return self.container.snapshot()
        raise ValueError(f"unknown model {which!r}")


def make_world(seed: int = 0, fixture: bool = True, audit_each_step: bool = False,
               container: Optional[Container] = None) -> World:
    """Container (optionally with the web-shop fixture), adapter, engine and session, synchronized."""
    with guard.platform_zone():
        if container is None:
            container = Container(seed=seed)
            adapter = CausalAdapter(container)
            if fixture:
                build_webshop_fixture(container)
                adapter.pump_events()
        else:
            adapter = CausalAdapter(container)
        target = Model(build_target_metamodel(), "target")
        engine = SyncEngine(adapter.source, target, load_builtin_rules().rules)
        engine.transform_batch("forward")
        session = AdaptationSession(engine, adapter, audit_each_step=audit_each_step)
    return World(container, adapter, engine, session)


@dataclass
class ScenarioResult:
    passed: bool
    assertions: list
    steps: list
    healed: list
    snapshots: dict = field(repr=False, default_factory=dict)

    def trace(self) -> dict:
        return {"passed": self.passed, "assertions": self.assertions, "healed": self.healed,
                "steps": self.steps}


def normalize_scenario(data) -> dict:
    if isinstance(data, list):
        data = {"stimuli": data}
    if not isinstance(data, dict) or not isinstance(data.get("stimuli", []), list):
        raise ValueError("a scenario is a list of stimuli or an object with a 'stimuli' list")
    for s in data.get("stimuli", []):
        if s.get("action") not in ("install_type", "inject_call"):
            raise ValueError(f"unknown stimulus action {s.get('action')!r}")
    return data


def _stimulate(world: World, stim: dict):
    args = stim.get("args", {})
    with guard.platform_zone():
        if stim["action"] == "install_type":
            name = args["template"]
            if name not in TEMPLATES:
                raise ValueError(f"unknown module type template {name!r}")
            world.container.install_type(TEMPLATES[name])
        else:
            for _ in range(int(args.get("count", 1))):
                world.container.inject_call(args["module"], args["interface"], args.get("exception"))


def run_self_healing(scenario, policy: Optional[HealingPolicy] = None, world: Optional[World] = None) -> ScenarioResult:
    """Replay ``scenario`` against the web-shop fixture with the self-healing manager in the loop."""
    scenario = normalize_scenario(scenario)
    if policy is None:
        policy = HealingPolicy(int(scenario.get("threshold", 3)))
    world = world or make_world(seed=int(scenario.get("seed", 0)), audit_each_step=True)
    world.session.audit_each_step = True
    manager = SelfHealingManager(world.session, policy)
    stimuli = sorted(scenario.get("stimuli", []), key=lambda s: int(s.get("at", 0)))
    last = max((int(s.get("at", 0)) for s in stimuli), default=0)
    tick = 0
    while True:
        for s in stimuli:
            if int(s.get("at", 0)) == tick:
                _stimulate(world, s)
        acted = manager.run_once()
        tick += 1
        if tick > last and acted is None:
            break
    assertions = _check_expectations(world, scenario.get("expect", {}))
    for rec in world.session.steps:
        if rec.audit:
            assertions.append({"name": f"audit step {rec.index}", "passed": False, "detail": rec.audit})
    steps = [r.to_dict() for r in world.session.steps]
    snapshots = {w: world.dump(w) for w in ("source", "target", "corr", "container")}
    return ScenarioResult(all(a["passed"] for a in assertions), assertions, steps, manager.healed, snapshots)


def _component_by_name(target: Model, name: str):
    return next((c for c in target.elements_of("Component") if c.get("name") == name), None)


def _check_expectations(world: World, expect: dict) -> list:
    out = []
    t = world.target
    with guard.platform_zone():
        for want in expect.get("connected", []):
            conn = t.find(want["connector"])
            ok = False
            if conn is not None and conn.is_a("Connector"):
                req = t.get(t.get(conn.target("required")).parent).get("name")
                prov = t.get(t.get(conn.target("provided")).parent).get("name")
                ok = (req, prov) == (want["required"], want["provided"])
            wired = world.container.wirings.get(want["connector"])
            ok = ok and wired is not None and wired[1].split(".")[0] == want["provided"]
            out.append({"name": f"connected {want['required']}->{want['provided']} via {want['connector']}",
                        "passed": ok, "detail": None})
        for name in expect.get("absent", []):
            in_target = any(e.get("name") == name for e in t.elements_of("Component")) or \
                any(e.get("name") == name for e in t.elements_of("ComponentType")) or name in t
            in_source = name in world.source
            c = world.container
            in_container = name in c.modules or name in c.types or name in c.wirings
            out.append({"name": f"absent {name}", "passed": not (in_target or in_source or in_container),
                        "detail": {"target": in_target, "source": in_source, "container": in_container}})
        for name, state in sorted(expect.get("states", {}).items()):
            comp = _component_by_name(t, name)
            got = comp.get("state") if comp else None
            out.append({"name": f"state {name}", "passed": got == state, "detail": got})
        if "healed" in expect:
            n = len(world.session.steps)
            out.append({"name": "adaptation happened" if expect["healed"] else "no adaptation",
                        "passed": bool(n) == bool(expect["healed"]), "detail": n})
    return out


def load_scenario(text: str) -> dict:
    return normalize_scenario(json.loads(text))
