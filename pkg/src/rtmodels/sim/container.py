"""A simulated EJB-like container: the managed system behind the source model.

The container exposes sensors as a queue of :class:`SystemEvent` and
effectors as :class:`EffectorCommand` batches executed atomically.  Events
caused by an effector batch carry that batch's id so the adapter can drop
them as echoes.
"""

from __future__ import annotations

import copy
import random
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .. import guard
from ..errors import IllegalTransition, NotStarted, PlatformError, UnknownEntity, UnwiredStart
from ..metamodels import is_legal_transition
from . import naming
from .naming import ModuleTemplate

# sensor event kinds
MODULE_TYPE_INSTALLED = "ModuleTypeInstalled"
MODULE_INSTANTIATED = "ModuleInstantiated"
MODULE_STATE_CHANGED = "ModuleStateChanged"
ENTRY_VALUE_CHANGED = "EntryValueChanged"
WIRED = "Wired"
UNWIRED = "Unwired"
INSTANCE_CREATED = "InstanceCreated"
CALL_COMPLETED = "CallCompleted"
MODULE_REMOVED = "ModuleRemoved"
MODULE_TYPE_REMOVED = "ModuleTypeRemoved"

# effector command kinds, in canonical execution order
STOP = "Stop"
UNWIRE = "Unwire"
UNDEPLOY = "Undeploy"
REMOVE_MODULE = "RemoveModule"
REMOVE_MODULE_TYPE = "RemoveModuleType"
INSTANTIATE_MODULE = "InstantiateModule"
DEPLOY = "Deploy"
WIRE = "Wire"
SET_ENTRY = "SetEntry"
START = "Start"

COMMAND_RANK = {
    STOP: (0, 0), UNWIRE: (1, 0), UNDEPLOY: (2, 0),
    REMOVE_MODULE: (3, 0), REMOVE_MODULE_TYPE: (3, 1),
    INSTANTIATE_MODULE: (4, 0), DEPLOY: (5, 0), WIRE: (6, 0), SET_ENTRY: (7, 0), START: (8, 0),
}
COMMAND_KINDS = tuple(COMMAND_RANK)


@dataclass(frozen=True)
class SystemEvent:
    kind: str
    payload: dict
    timestamp: int
    echo_of: Optional[int] = None  # batch id when caused by an effector batch

    def to_dict(self) -> dict:
        return {"kind": self.kind, "payload": self.payload, "timestamp": self.timestamp,
                "echo_of": self.echo_of}


@dataclass(frozen=True)
class EffectorCommand:
    kind: str
    target: str            # uid the command acts on
    args: tuple = ()       # (key, value) pairs

    def __post_init__(self):
        if self.kind not in COMMAND_RANK:
            raise ValueError(f"unknown command kind {self.kind!r}")

    def arg(self, key, default=None):
        return dict(self.args).get(key, default)

    def sort_key(self):
        return COMMAND_RANK[self.kind] + (self.target,)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "target": self.target, **dict(self.args)}


def command(kind: str, target: str, **args) -> EffectorCommand:
    return EffectorCommand(kind, target, tuple(sorted(args.items())))


def canonical_order(commands) -> list:
    """Stop < Unwire < Undeploy < Remove < Instantiate < Deploy < Wire < SetEntry < Start, then by uid."""
    return sorted(commands, key=EffectorCommand.sort_key)


@dataclass
class CommandBatch:
    commands: list
    derived_from: Optional[tuple] = None  # (first, last) notification sequence numbers
    batch_id: int = 0
    dismissed: bool = False

    def __len__(self):
        return len(self.commands)

    def kinds(self) -> list:
        return [c.kind for c in self.commands]

    def to_dict(self) -> dict:
        return {"batch_id": self.batch_id, "derived_from": list(self.derived_from) if self.derived_from else None,
                "dismissed": self.dismissed, "commands": [c.to_dict() for c in self.commands]}


@dataclass
class ModuleRecord:
    uid: str
    type_name: str
    state: str = "UNDEPLOYED"
    entries: dict = field(default_factory=dict)


@dataclass
class CallRecord:
    uid: str
    instance: str
    interface: str
    exception: Optional[str]


class Container:
    """State of the managed platform plus its sensor queue."""

    def __init__(self, name: str = "Container", seed: int = 0):
        self.uid = naming.CONTAINER_UID
        self.name = name
        self.types: dict[str, ModuleTemplate] = {}
        self.modules: dict[str, ModuleRecord] = {}
        self.wirings: dict[str, tuple] = {}         # connector -> (reference uid, interface uid)
        self.instances: dict[str, list] = {}        # bean uid -> instance uids
        self.calls: dict[str, CallRecord] = {}
        self._clock = 0
        self._calls_made = 0
        self._rng = random.Random(seed)
        self._events: deque = deque()
        self._lock = threading.Lock()
        self._buffer: Optional[list] = None

    # -- sensors

    def _emit(self, kind: str, echo_of: Optional[int] = None, **payload) -> SystemEvent:
        self._clock += 1
        ev = SystemEvent(kind, payload, self._clock, echo_of)
        if self._buffer is not None:
            self._buffer.append(ev)
        else:
            with self._lock:
                self._events.append(ev)
        return ev

    def drain_events(self) -> list:
        guard.check_access("container")
        with self._lock:
            out = list(self._events)
            self._events.clear()
        return out

    @property
    def pending_events(self) -> int:
        with self._lock:
            return len(self._events)

    @property
    def empty(self) -> bool:
        return not (self.types or self.modules or self.wirings)

    # -- lookups

    def template_of(self, module: str) -> ModuleTemplate:
        return self.types[self.modules[module].type_name]

    def _interfaces(self, module: str) -> dict:
        out = {}
        tpl = self.template_of(module)
        for b in tpl.beans:
            for i in b.interfaces:
                out[naming.interface_uid(naming.bean_uid(module, b.name), i)] = (b, i)
        return out

    def _references(self, module: str) -> list:
        tpl = self.template_of(module)
        return [naming.reference_uid(naming.bean_uid(module, b.name), r)
                for b in tpl.beans for r, _ in b.references]

    def _module_of(self, uid: str) -> Optional[str]:
        head = uid.split(".", 1)[0]
        return head if head in self.modules else None

    def _wired_refs(self) -> set:
        return {r for r, _ in self.wirings.values()}

    # -- stimuli (non-echo events)

    def install_type(self, tpl: ModuleTemplate) -> SystemEvent:
        guard.check_access("container")
        if tpl.name in self.types:
            raise PlatformError(f"module type {tpl.name} already installed")
        self.types[tpl.name] = tpl
        return self._emit(MODULE_TYPE_INSTALLED, template=tpl.to_dict())

    def inject_call(self, module: str, interface: str, exception: Optional[str] = None) -> SystemEvent:
        """Complete one call through ``module``'s provided ``interface``, optionally failing."""
        guard.check_access("container")
        rec = self.modules.get(module)
        if rec is None:
            raise UnknownEntity(f"no module {module}")
        if rec.state != "STARTED":
            raise NotStarted(f"module {module} is {rec.state}")
        match = [(u, b) for u, (b, name) in self._interfaces(module).items() if name == interface]
        if not match:
            raise UnknownEntity(f"module {module} provides no interface {interface}")
        iface, bean = match[0]
        pool = self.instances.get(naming.bean_uid(module, bean.name), [])
        if not pool:
            raise NotStarted(f"no instances of {bean.name} in {module}")
        inst = pool[self._rng.randrange(len(pool))]
        self._calls_made += 1
        uid = naming.call_uid(self._calls_made)
        self.calls[uid] = CallRecord(uid, inst, iface, exception)
        return self._emit(CALL_COMPLETED, call=uid, instance=inst, interface=iface, exception=exception)

    # -- effectors

    def execute(self, commands, batch_id: Optional[int] = None) -> list:
        """Run ``commands`` in the given order, all or none.  Returns the emitted events."""
        guard.check_access("container")
        saved = self._save()
        self._buffer = []
        try:
            for c in commands:
                self._apply(c, batch_id)
        except Exception:
            self._restore(saved)
            self._buffer = None
            raise
        events, self._buffer = self._buffer, None
        with self._lock:
            self._events.extend(events)
        return events

    def _save(self):
        return (copy.deepcopy((self.types, self.modules, self.wirings, self.instances, self.calls)),
                self._clock, self._calls_made, self._rng.getstate())

    def _restore(self, saved):
        (self.types, self.modules, self.wirings, self.instances, self.calls), \
            self._clock, self._calls_made, rng = saved
        self._rng.setstate(rng)

    def _module(self, uid: str) -> ModuleRecord:
        rec = self.modules.get(uid)
        if rec is None:
            raise UnknownEntity(f"no module {uid}")
        return rec

    def _transition(self, rec: ModuleRecord, new: str, echo):
        if not is_legal_transition(rec.state, new):
            raise IllegalTransition(f"{rec.uid}: {rec.state} -> {new} is not a legal transition")
        old, rec.state = rec.state, new
        self._emit(MODULE_STATE_CHANGED, echo, module=rec.uid, old=old, new=new)

    def _apply(self, c: EffectorCommand, echo):
        k = c.kind
        if k == INSTANTIATE_MODULE:
            tname = c.arg("type")
            if tname not in self.types:
                raise UnknownEntity(f"module type {tname} is not installed")
            if c.target in self.modules:
                raise PlatformError(f"module {c.target} already exists")
            tpl = self.types[tname]
            entries = {naming.entry_uid(naming.bean_uid(c.target, b.name), e): ""
                       for b in tpl.beans for e in b.entries}
            self.modules[c.target] = ModuleRecord(c.target, tname, "UNDEPLOYED", entries)
            self._emit(MODULE_INSTANTIATED, echo, module=c.target, type=tname)
        elif k == DEPLOY:
            rec = self._module(c.target)
            if rec.state == "STARTED":
                raise IllegalTransition(f"{rec.uid}: STARTED -> DEPLOYED requires Stop")
            self._transition(rec, "DEPLOYED", echo)
        elif k == UNDEPLOY:
            self._transition(self._module(c.target), "UNDEPLOYED", echo)
        elif k == START:
            rec = self._module(c.target)
            if rec.state == "DEPLOYED":
                loose = [r for r in self._references(rec.uid) if r not in self._wired_refs()]
                if loose:
                    raise UnwiredStart(f"{rec.uid}: unwired references {', '.join(loose)}")
            self._transition(rec, "STARTED", echo)
            self._fill_pools(rec)
        elif k == STOP:
            rec = self._module(c.target)
            if rec.state != "STARTED":
                raise IllegalTransition(f"{rec.uid}: cannot stop a {rec.state} module")
            self._transition(rec, "DEPLOYED", echo)
        elif k == SET_ENTRY:
            mod = self._module_of(c.target)
            if mod is None or c.target not in self.modules[mod].entries:
                raise UnknownEntity(f"no environment entry {c.target}")
            entries = self.modules[mod].entries
            old, entries[c.target] = entries[c.target], c.arg("value")
            self._emit(ENTRY_VALUE_CHANGED, echo, entry=c.target, old=old, new=c.arg("value"))
        elif k == WIRE:
            ref, iface = c.arg("reference"), c.arg("interface")
            rmod, imod = self._module_of(ref), self._module_of(iface)
            if rmod is None or ref not in self._references(rmod):
                raise UnknownEntity(f"no reference {ref}")
            if imod is None or iface not in self._interfaces(imod):
                raise UnknownEntity(f"no interface {iface}")
            if c.target in self.wirings:
                raise PlatformError(f"connector {c.target} already exists")
            if ref in self._wired_refs():
                raise PlatformError(f"reference {ref} is already wired")
            self.wirings[c.target] = (ref, iface)
            self._emit(WIRED, echo, connector=c.target, reference=ref, interface=iface)
        elif k == UNWIRE:
            if c.target not in self.wirings:
                raise UnknownEntity(f"no connector {c.target}")
            del self.wirings[c.target]
            self._emit(UNWIRED, echo, connector=c.target)
        elif k == REMOVE_MODULE:
            rec = self._module(c.target)
            if rec.state != "UNDEPLOYED":
                raise IllegalTransition(f"{rec.uid}: only undeployed modules can be removed")
            ends = set(self._references(rec.uid)) | set(self._interfaces(rec.uid))
            if any(r in ends or i in ends for r, i in self.wirings.values()):
                raise PlatformError(f"{rec.uid} is still wired")
            prefix = rec.uid + "."
            for b in [b for b in self.instances if b.startswith(prefix)]:
                gone = set(self.instances.pop(b))
                for cu in [cu for cu, cr in self.calls.items() if cr.instance in gone]:
                    del self.calls[cu]
            del self.modules[rec.uid]
            self._emit(MODULE_REMOVED, echo, module=rec.uid)
        elif k == REMOVE_MODULE_TYPE:
            if c.target not in self.types:
                raise UnknownEntity(f"no module type {c.target}")
            users = [m for m, r in self.modules.items() if r.type_name == c.target]
            if users:
                raise PlatformError(f"module type {c.target} still used by {', '.join(sorted(users))}")
            del self.types[c.target]
            self._emit(MODULE_TYPE_REMOVED, echo, type=c.target)

    def _fill_pools(self, rec: ModuleRecord):
        # pools are created on first start and live until the module is removed;
        # the model does not know about them, so these are never echoes
        for b in self.template_of(rec.uid).beans:
            bu = naming.bean_uid(rec.uid, b.name)
            if self.instances.get(bu):
                continue
            self.instances[bu] = []
            for k in range(1, b.pool_size + 1):
                iu = naming.instance_uid(bu, k)
                self.instances[bu].append(iu)
                self._emit(INSTANCE_CREATED, None, instance=iu, bean=bu)

    # -- snapshots

    def snapshot(self) -> dict:
        """JSON-ready view of the full container state."""
        return {
            "name": self.name,
            "module_types": [self.types[t].to_dict() for t in self.types],
            "modules": [{"uid": r.uid, "type": r.type_name, "state": r.state,
                         "entries": dict(sorted(r.entries.items()))} for r in self.modules.values()],
            "connectors": [{"uid": c, "reference": r, "interface": i}
                           for c, (r, i) in sorted(self.wirings.items())],
            "instances": {b: list(v) for b, v in sorted(self.instances.items())},
            "calls": [{"uid": c.uid, "instance": c.instance, "interface": c.interface,
                       "exception": c.exception} for c in self.calls.values()],
        }


def restore_container(snapshot: dict, seed: int = 0) -> Container:
    """Container holding exactly the state of ``snapshot``; the event queue starts empty."""
    c = Container(snapshot.get("name", "Container"), seed=seed)
    for t in snapshot["module_types"]:
        tpl = ModuleTemplate.from_dict(t)
        c.types[tpl.name] = tpl
    for m in snapshot["modules"]:
        c.modules[m["uid"]] = ModuleRecord(m["uid"], m["type"], m["state"], dict(m["entries"]))
    for w in snapshot["connectors"]:
        c.wirings[w["uid"]] = (w["reference"], w["interface"])
    c.instances = {b: list(v) for b, v in snapshot["instances"].items()}
    for call in snapshot["calls"]:
        c.calls[call["uid"]] = CallRecord(call["uid"], call["instance"], call["interface"], call["exception"])
    c._calls_made = max((int(u.split("-")[1]) for u in c.calls), default=0)
    return c
