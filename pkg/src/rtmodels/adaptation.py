"""Manager-facing adaptation operators on the target model.

An :class:`AdaptationSession` is the only way a manager changes the running
system.  Each operator validates its preconditions on the target model,
performs one permitted change, and then (unless the session is batched)
propagates it: backward sync, effector flush, sensor pump, forward sync.
Instantiation is the exception: it goes through a factory that builds the
module directly in the source model, because the target model lacks the
bean-level detail needed to do so.
"""

from __future__ import annotations

import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import wraps
from typing import Callable, Optional

from . import guard
from .engine import SyncEngine
from .errors import (
    AlreadyWired,
    FactoryFailure,
    IllegalLifecycleChange,
    OperatorViolation,
    PendingChanges,
    RoleMismatch,
    RuntimeModelError,
    StillDeployed,
    StillWired,
    TypeInUse,
    TypeMismatch,
    UnknownComponent,
    UnknownComponentType,
    UnknownConnector,
    UnknownProperty,
    UnwiredStartViolation,
)
from .kernel import Model, canonical
from .metamodels import LIFECYCLE, build_target_metamodel, check_wellformedness, is_legal_transition
from .rules import BWD, FWD
from .sim.adapter import CausalAdapter, build_source_model
from .sim import naming

log = logging.getLogger(__name__)


# -- factories ----------------------------------------------------------------

class ModuleFactory:
    """Builds an EjbModule with its full bean structure from a module type in the source model."""

    def create(self, source: Model, module_type_uid: str, module_name: Optional[str] = None) -> str:
        mt = source.get(module_type_uid)
        if not mt.is_a("EjbModuleType"):
            raise FactoryFailure(f"{module_type_uid} is not a module type")
        name = module_name or _unique(source, naming.module_name_for(mt.get("name")))
        if name in source:
            raise FactoryFailure(f"uid {name} already in use")
        m = source.create_element("EjbModule", name, {"name": name, "state": "UNDEPLOYED"},
                                  naming.CONTAINER_UID, "modules").uid
        source.add_reference(m, "type", mt.uid)
        for bt in source.children(mt, "beanTypes"):
            session = bt.is_a("SessionBeanType")
            bname = bt.get("name")
            b = source.create_element("SessionBean" if session else "MessageDrivenBean",
                                      naming.bean_uid(m, bname), {"name": bname}, m, "beans").uid
            source.add_reference(b, "type", bt.uid)
            if session:
                for it in source.children(bt, "interfaceTypes"):
                    u = source.create_element("EjbInterface", naming.interface_uid(b, it.get("name")),
                                              {"name": it.get("name")}, b, "interfaces").uid
                    source.add_reference(u, "type", it.uid)
            for rt in source.children(bt, "referenceTypes"):
                u = source.create_element("EjbReference", naming.reference_uid(b, rt.get("name")),
                                          {"name": rt.get("name")}, b, "references").uid
                source.add_reference(u, "type", rt.uid)
            for et in source.children(bt, "entryTypes"):
                u = source.create_element("SimpleEnvironmentEntry", naming.entry_uid(b, et.get("name")),
                                          {"name": et.get("name"), "value": ""}, b, "entries").uid
                source.add_reference(u, "type", et.uid)
        return m


def _unique(model: Model, base: str) -> str:
    if base not in model:
        return base
    k = 2
    while f"{base}-{k}" in model:
        k += 1
    return f"{base}-{k}"


class FactoryRegistry:
    """Factories keyed by module-type uid, with one default for all types."""

    def __init__(self, default: Optional[ModuleFactory] = None):
        self.default = default or ModuleFactory()
        self._by_type: dict[str, ModuleFactory] = {}

    def register(self, module_type_uid: str, factory: ModuleFactory):
        self._by_type[module_type_uid] = factory

    def factory_for(self, module_type_uid: str) -> ModuleFactory:
        return self._by_type.get(module_type_uid, self.default)


# -- step log -----------------------------------------------------------------

@dataclass
class StepRecord:
    index: int
    operations: list
    backward: Optional[dict] = None
    commands: Optional[dict] = None
    pumped: int = 0
    forward: Optional[dict] = None
    error: Optional[str] = None
    audit: Optional[list] = None

    def to_dict(self) -> dict:
        return {"index": self.index, "operations": self.operations, "backward": self.backward,
                "commands": self.commands, "pumped": self.pumped, "forward": self.forward,
                "error": self.error, "audit": self.audit}


def _operator(name: str):
    def deco(fn: Callable):
        @wraps(fn)
        def run(self, *args, **kwargs):
            with guard.platform_zone():
                try:
                    return fn(self, *args, **kwargs)
                except OperatorViolation as v:
                    if not getattr(v, "logged", False):  # nested dispatch through mutate()
                        v.logged = True
                        self.violations.append({"operator": v.operator, "reason": v.reason,
                                                "error": type(v).__name__})
                    raise
        run.operator_name = name
        return run
    return deco


class AdaptationSession:
    """Restricted, validated changes on the target model plus their propagation."""

    def __init__(self, engine: SyncEngine, adapter: CausalAdapter, batched: bool = False,
                 factories: Optional[FactoryRegistry] = None, audit_each_step: bool = False):
        if engine.source is not adapter.source:
            raise ValueError("engine and adapter must share the source model")
        self.engine = engine
        self.adapter = adapter
        self.batched = batched
        self.factories = factories or FactoryRegistry()
        self.audit_each_step = audit_each_step
        self.steps: list[StepRecord] = []
        self.violations: list[dict] = []
        self._deferred: list[dict] = []
        self._connector_seq = max((_connector_number(c.uid) for c in self.target.elements_of("Connector")),
                                  default=0)

    @property
    def target(self) -> Model:
        return self.engine.target

    @property
    def source(self) -> Model:
        return self.engine.source

    # -- lookups

    def _typed(self, uid, type_name: str, err, op: str):
        e = self.target.find(uid) if isinstance(uid, str) else None
        if e is None or not e.is_a(type_name):
            raise err(op, f"no {type_name} {uid!r}")
        return e

    def _connectors_at(self, iface_uid: str) -> list:
        return [c for c in self.target.elements_of("Connector")
                if iface_uid in c.refs["required"] or iface_uid in c.refs["provided"]]

    def _quiescent(self, op: str):
        if self._deferred or len(self.engine.pending_target) or len(self.adapter.queue):
            raise PendingChanges(f"{op}: target-side changes are still pending; commit them first")

    # -- operators

    @_operator("instantiate")
    def instantiate(self, component_type_uid: str) -> str:
        op = "instantiate"
        ct = self._typed(component_type_uid, "ComponentType", UnknownComponentType, op)
        mt = [k[1][0] for k in self.engine.corr.by_target.get(ct.uid, ()) if k[0] == "CorrModuleType"]
        if not mt:
            raise UnknownComponentType(op, f"{ct.uid} has no corresponding module type")
        self._quiescent(op)
        self.refresh()
        factory = self.factories.factory_for(mt[0])
        try:
            module = factory.create(self.source, mt[0])
        except FactoryFailure:
            raise
        except RuntimeModelError as ex:
            raise FactoryFailure(f"factory for {mt[0]} failed: {ex}") from ex
        rec = self._new_record([{"op": op, "args": {"component_type": ct.uid}}])
        try:
            batch = self.adapter.flush_commands()
        except RuntimeModelError as ex:
            self._recover(rec, ex)
            raise
        rec.commands = batch.to_dict()
        rec.pumped = self.adapter.pump_events()
        rec.forward = self.engine.synchronize(FWD).to_dict()
        self._finish(rec)
        links = [k for k in self.engine.corr.by_source.get(module, ()) if k[0] == "CorrModule"]
        if not links:
            raise FactoryFailure(f"module {module} did not appear in the target model")
        return self.engine.corr.get(links[0]).target_uids[0]

    @_operator("set_lifecycle")
    def set_lifecycle(self, component_uid: str, new_state: str) -> None:
        op = "set_lifecycle"
        c = self._typed(component_uid, "Component", UnknownComponent, op)
        new_state = getattr(new_state, "value", new_state)
        if new_state not in LIFECYCLE:
            raise OperatorViolation(op, f"unknown lifecycle state {new_state!r}")
        old = c.get("state")
        if old != new_state and not is_legal_transition(old, new_state):
            raise IllegalLifecycleChange(op, f"{c.uid}: {old} -> {new_state} skips a state")
        if new_state == "STARTED" and old != "STARTED":
            loose = [i for i in c.refs["required"] if not self._connectors_at(i)]
            if loose:
                raise UnwiredStartViolation(op, f"{c.uid}: required interfaces unwired: {', '.join(loose)}")
        self.target.set_attribute(c.uid, "state", new_state)
        self._changed(op, {"component": c.uid, "state": new_state})

    @_operator("set_property")
    def set_property(self, property_uid: str, value: str) -> None:
        op = "set_property"
        p = self._typed(property_uid, "Property", UnknownProperty, op)
        if not isinstance(value, str):
            raise OperatorViolation(op, f"property values are text, got {type(value).__name__}")
        self.target.set_attribute(p.uid, "value", value)
        self._changed(op, {"property": p.uid, "value": value})

    @_operator("connect")
    def connect(self, required_uid: str, provided_uid: str) -> str:
        op = "connect"
        ri = self._typed(required_uid, "Interface", RoleMismatch, op)
        pi = self._typed(provided_uid, "Interface", RoleMismatch, op)
        if ri.slot != "required" or pi.slot != "provided":
            raise RoleMismatch(op, f"{ri.uid} is {ri.slot}, {pi.uid} is {pi.slot}; need required -> provided")
        rt, pt = self.target.get(ri.target("type")), self.target.get(pi.target("type"))
        if rt.get("name") != pt.get("name"):
            raise TypeMismatch(op, f"{rt.get('name')} cannot be served by {pt.get('name')}")
        if [c for c in self._connectors_at(ri.uid) if ri.uid in c.refs["required"]]:
            raise AlreadyWired(op, f"{ri.uid} is already connected")
        self._connector_seq += 1
        uid = f"c{self._connector_seq}"
        while uid in self.target or uid in self.source:
            self._connector_seq += 1
            uid = f"c{self._connector_seq}"
        platform = self.target.elements_of("ComponentPlatform")[0]
        self.target.create_element("Connector", uid, {"name": uid}, platform.uid, "connectors")
        self.target.add_reference(uid, "required", ri.uid)
        self.target.add_reference(uid, "provided", pi.uid)
        self._changed(op, {"required": ri.uid, "provided": pi.uid, "connector": uid})
        return uid

    @_operator("disconnect")
    def disconnect(self, connector_uid: str) -> None:
        op = "disconnect"
        c = self._typed(connector_uid, "Connector", UnknownConnector, op)
        self.target.delete_element(c.uid)
        self._changed(op, {"connector": c.uid})

    @_operator("remove_component")
    def remove_component(self, component_uid: str) -> None:
        op = "remove_component"
        c = self._typed(component_uid, "Component", UnknownComponent, op)
        if c.get("state") != "UNDEPLOYED":
            raise StillDeployed(op, f"{c.uid} is {c.get('state')}")
        ifaces = c.refs["required"] + c.refs["provided"]
        if any(self._connectors_at(i) for i in ifaces):
            raise StillWired(op, f"{c.uid} still has connectors")
        self.target.delete_element(c.uid)
        self._changed(op, {"component": c.uid})

    @_operator("remove_component_type")
    def remove_component_type(self, type_uid: str) -> None:
        op = "remove_component_type"
        ct = self._typed(type_uid, "ComponentType", UnknownComponentType, op)
        users = [c.uid for c in self.target.elements_of("Component") if c.target("type") == ct.uid]
        if users:
            raise TypeInUse(op, f"{ct.uid} still instantiated by {', '.join(users)}")
        self.target.delete_element(ct.uid)
        self._changed(op, {"component_type": ct.uid})

    @_operator("mutate")
    def mutate(self, mutation: dict):
        """Dispatch a raw target-model mutation to the matching operator, or refuse it."""
        kind = mutation.get("op")
        uid = mutation.get("uid")
        elem = self.target.find(uid) if isinstance(uid, str) else None
        tname = elem.type_name if elem is not None else mutation.get("type")
        if kind == "set" and tname == "Component" and mutation.get("attr") == "state":
            return self.set_lifecycle(uid, mutation.get("value"))
        if kind == "set" and tname == "Property" and mutation.get("attr") == "value":
            return self.set_property(uid, mutation.get("value"))
        if kind == "delete" and tname == "Connector":
            return self.disconnect(uid)
        if kind == "delete" and tname == "Component":
            return self.remove_component(uid)
        if kind == "delete" and tname == "ComponentType":
            return self.remove_component_type(uid)
        if kind == "create" and tname == "Connector":
            return self.connect(mutation.get("required"), mutation.get("provided"))
        if kind == "instantiate":
            return self.instantiate(uid)
        raise OperatorViolation(f"{kind}:{tname}", _refusal(kind, tname, elem))

    reject_invalid = mutate

    # -- propagation

    def _changed(self, op: str, args: dict):
        self._deferred.append({"op": op, "args": args})
        if not self.batched:
            self.commit()

    def commit(self) -> Optional[StepRecord]:
        """Propagate every deferred operator as one step."""
        if not self._deferred:
            return None
        ops, self._deferred = self._deferred, []
        with guard.platform_zone():
            rec = self._new_record(ops)
            rec.backward = self.engine.synchronize(BWD).to_dict()
            try:
                batch = self.adapter.flush_commands()
            except RuntimeModelError as ex:
                self._recover(rec, ex)
                raise
            rec.commands = batch.to_dict()
            rec.pumped = self.adapter.pump_events()
            rec.forward = self.engine.synchronize(FWD).to_dict()
            self._finish(rec)
        return rec

    @contextmanager
    def batch(self):
        """Defer propagation of the enclosed operators to one backward sync and one flush."""
        was, self.batched = self.batched, True
        try:
            yield self
        finally:
            self.batched = was
            self.commit()

    def refresh(self):
        """Pump sensor events and synchronize them forward."""
        with guard.platform_zone():
            self.adapter.pump_events()
            return self.engine.synchronize(FWD)

    def _new_record(self, ops) -> StepRecord:
        rec = StepRecord(len(self.steps), ops)
        self.steps.append(rec)
        return rec

    def _recover(self, rec: StepRecord, ex: Exception):
        # the container refused the batch: put the source back in line and re-derive the target
        rec.error = f"{type(ex).__name__}: {ex}"
        log.info("step %d refused by the platform: %s", rec.index, rec.error)
        self.adapter.resync()
        self.adapter.queue.clear()
        rec.forward = self.engine.synchronize(FWD).to_dict()
        self._finish(rec)

    def _finish(self, rec: StepRecord):
        if self.audit_each_step:
            rec.audit = self.audit()

    # -- consistency

    def audit(self) -> list[str]:
        """Cross-check source, target, correspondence and container; returns problems found."""
        with guard.platform_zone():
            problems = []
            rebuilt = build_source_model(self.adapter.container.snapshot())
            if canonical(rebuilt) != canonical(self.source):
                problems.append("source model differs from the container state")
            src = self.source.copy()
            tgt = Model(build_target_metamodel(), "target")
            fresh = SyncEngine(src, tgt, self.engine.rules)
            fresh.transform_batch(FWD)
            if canonical(tgt) != canonical(self.target):
                problems.append("target model differs from a fresh forward transformation")
            if fresh.corr.signatures() != self.engine.corr.signatures():
                problems.append("correspondence model differs from a fresh forward transformation")
            for v in check_wellformedness(self.source) + check_wellformedness(self.target):
                problems.append(str(v))
            return problems

    def log_json(self) -> str:
        return json.dumps([s.to_dict() for s in self.steps], indent=2, sort_keys=True)


def _connector_number(uid: str) -> int:
    return int(uid[1:]) if uid[:1] == "c" and uid[1:].isdigit() else 0


def _refusal(kind, tname, elem) -> str:
    if kind == "delete" and tname == "Interface" and elem is not None and elem.slot == "required":
        return "component implementation requires the corresponding functionality"
    if kind == "delete" and tname == "Interface":
        return "provided interfaces belong to the component implementation"
    if kind == "create" and tname == "Component":
        return "components are created through the instantiate operation of their type"
    if kind == "create":
        return f"creating {tname} elements is not an adaptation operator"
    if kind == "set":
        return f"{tname} attributes other than Component.state and Property.value are read-only"
    return f"{kind} on {tname} is not an adaptation operator"
