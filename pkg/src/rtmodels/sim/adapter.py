"""Causal connection between the container and the source model.

Sensor events flow in through :meth:`CausalAdapter.pump_events`, each applied
as a small source-model edit.  Source-model changes made by backward
synchronization or a factory queue up as notifications until
:meth:`CausalAdapter.flush_commands` turns them into one ordered, atomic
effector batch.
"""

from __future__ import annotations

import itertools
import logging
from typing import Optional

from ..errors import UnknownEntity, UnmappableChange
from ..kernel import ChangeKind, Model
from ..metamodels import build_source_metamodel
from . import container as C
from . import naming
from .naming import ModuleTemplate

log = logging.getLogger(__name__)

# note -> command mapping for lifecycle writes, keyed by (old, new)
_STATE_COMMANDS = {
    ("UNDEPLOYED", "DEPLOYED"): C.DEPLOY,
    ("DEPLOYED", "STARTED"): C.START,
    ("STARTED", "DEPLOYED"): C.STOP,
    ("DEPLOYED", "UNDEPLOYED"): C.UNDEPLOY,
    # skipping a state has no effector of its own; the container rejects these
    ("UNDEPLOYED", "STARTED"): C.START,
    ("STARTED", "UNDEPLOYED"): C.UNDEPLOY,
}


def build_source_model(snapshot: dict, guarded: bool = False) -> Model:
    """Source model built from scratch out of a container snapshot."""
    model = Model(build_source_metamodel(), "source", guarded=guarded)
    naming.add_container(model, snapshot.get("name", "Container"))
    templates = {}
    for t in snapshot["module_types"]:
        tpl = ModuleTemplate.from_dict(t)
        templates[tpl.name] = tpl
        naming.add_module_type(model, tpl)
    for m in snapshot["modules"]:
        naming.add_module(model, m["uid"], templates[m["type"]], m["state"], m["entries"])
    for c in snapshot["connectors"]:
        naming.add_connector(model, c["uid"], c["reference"], c["interface"])
    for bean, insts in snapshot["instances"].items():
        for i in insts:
            naming.add_instance(model, i, bean)
    for c in snapshot["calls"]:
        naming.add_call(model, c["uid"], c["instance"], c["interface"], c["exception"])
    model.drain_notifications()
    return model


class CausalAdapter:
    """Event-driven, incremental bridge between a :class:`Container` and its source model."""

    def __init__(self, container: C.Container, source: Optional[Model] = None):
        self.container = container
        if source is None:
            container.drain_events()
            source = build_source_model(container.snapshot(), guarded=True)
        self.source = source
        self.queue = source.subscribe()
        self.batches: list[C.CommandBatch] = []
        self._ids = itertools.count(1)
        self.echoes_skipped = 0

    # -- sensors -> model

    def pump_events(self) -> int:
        """Apply every queued container event to the source model; returns how many were applied."""
        applied = 0
        with self.queue.muted():
            for ev in self.container.drain_events():
                if ev.echo_of is not None:
                    self.echoes_skipped += 1
                    continue
                self._apply_event(ev)
                applied += 1
        return applied

    def _need(self, uid: str):
        if uid not in self.source:
            raise UnknownEntity(f"event refers to {uid}, which the source model does not know")

    def _apply_event(self, ev: C.SystemEvent):
        p, m = ev.payload, self.source
        k = ev.kind
        if k == C.MODULE_TYPE_INSTALLED:
            naming.add_module_type(m, ModuleTemplate.from_dict(p["template"]))
        elif k == C.MODULE_INSTANTIATED:
            self._need(p["type"])
            tpl = self.container.types[p["type"]]
            rec = self.container.modules.get(p["module"])
            naming.add_module(m, p["module"], tpl, "UNDEPLOYED", dict(rec.entries) if rec else {})
        elif k == C.MODULE_STATE_CHANGED:
            self._need(p["module"])
            m.set_attribute(p["module"], "state", p["new"])
        elif k == C.ENTRY_VALUE_CHANGED:
            self._need(p["entry"])
            m.set_attribute(p["entry"], "value", p["new"])
        elif k == C.WIRED:
            self._need(p["reference"])
            self._need(p["interface"])
            naming.add_connector(m, p["connector"], p["reference"], p["interface"])
        elif k == C.UNWIRED:
            self._need(p["connector"])
            m.delete_element(p["connector"])
        elif k == C.INSTANCE_CREATED:
            self._need(p["bean"])
            naming.add_instance(m, p["instance"], p["bean"])
        elif k == C.CALL_COMPLETED:
            self._need(p["instance"])
            self._need(p["interface"])
            naming.add_call(m, p["call"], p["instance"], p["interface"], p.get("exception"))
        elif k in (C.MODULE_REMOVED, C.MODULE_TYPE_REMOVED):
            uid = p["module"] if k == C.MODULE_REMOVED else p["type"]
            self._need(uid)
            m.delete_element(uid)
        else:
            raise UnknownEntity(f"unknown event kind {k}")

    # -- model -> effectors

    def commands_for(self, notes) -> list:
        """Map source-model notifications to effector commands (unordered)."""
        m = self.source
        created = {n.subject_uid for n in notes if n.kind == ChangeKind.ELEMENT_CREATED}
        deleted = {n.subject_uid for n in notes if n.kind == ChangeKind.ELEMENT_DELETED}
        transient = created & deleted
        types = {}
        for n in notes:
            if n.kind == ChangeKind.ELEMENT_CREATED:
                types[n.subject_uid] = (n.new_value["type"], n.new_value["parent"])
            elif n.kind == ChangeKind.ELEMENT_DELETED:
                types[n.subject_uid] = (n.old_value["type"], n.old_value["parent"])

        def parent_of(uid):
            if uid in types:
                return types[uid][1]
            e = m.find(uid)
            return e.parent if e is not None else None

        def absorbed(uid) -> bool:
            # part of a subtree whose root is created or deleted in the same batch
            p = parent_of(uid)
            while p is not None:
                if p in created or p in deleted:
                    return True
                p = parent_of(p)
            return False

        def inside_changed(uid) -> bool:
            return uid in created or uid in deleted or absorbed(uid)

        out = []
        for n in notes:
            u = n.subject_uid
            if u in transient:
                continue
            if n.kind == ChangeKind.ELEMENT_CREATED:
                if absorbed(u):
                    continue
                t = n.new_value["type"]
                if t == "EjbModule":
                    e = m.get(u)
                    out.append(C.command(C.INSTANTIATE_MODULE, u, type=e.target("type")))
                elif t == "EjbConnector":
                    e = m.get(u)
                    out.append(C.command(C.WIRE, u, reference=e.target("reference"),
                                         interface=e.target("interface")))
                else:
                    raise UnmappableChange(f"creating a {t} ({u}) has no effector")
            elif n.kind == ChangeKind.ELEMENT_DELETED:
                if absorbed(u):
                    continue
                t = n.old_value["type"]
                kind = {"EjbModule": C.REMOVE_MODULE, "EjbModuleType": C.REMOVE_MODULE_TYPE,
                        "EjbConnector": C.UNWIRE}.get(t)
                if kind is None:
                    raise UnmappableChange(f"deleting a {t} ({u}) has no effector")
                out.append(C.command(kind, u))
            elif n.kind == ChangeKind.ATTRIBUTE_SET:
                e = m.find(u)
                t = e.type_name if e is not None else types.get(u, ("?",))[0]
                if t == "EjbModule" and n.feature == "state":
                    if n.old_value == n.new_value:
                        continue
                    out.append(C.command(_STATE_COMMANDS[(n.old_value, n.new_value)], u))
                elif t == "SimpleEnvironmentEntry" and n.feature == "value":
                    out.append(C.command(C.SET_ENTRY, u, value=n.new_value))
                elif n.feature == "name" and inside_changed(u):
                    continue
                else:
                    raise UnmappableChange(f"writing {t}.{n.feature} ({u}) has no effector")
            else:
                if inside_changed(u):
                    continue
                raise UnmappableChange(f"{n.kind.value} on {u}.{n.feature} has no effector")
        return out

    def flush_commands(self) -> C.CommandBatch:
        """Turn queued source changes into one canonically ordered batch and execute it atomically."""
        notes = self.queue.drain()
        bid = next(self._ids)
        span = (notes[0].sequence_no, notes[-1].sequence_no) if notes else None
        batch = C.CommandBatch(C.canonical_order(self.commands_for(notes)), span, bid)
        if batch.commands:
            log.debug("flush batch %d: %s", bid, batch.kinds())
            self.container.execute(batch.commands, bid)
        self.batches.append(batch)
        return batch

    def dismiss_pending(self) -> int:
        """Drop queued source changes without executing them and roll the model back to the container."""
        n = self.queue.clear()
        if n:
            self.resync()
        return n

    def resync(self) -> int:
        """Bring the source model back in line with the container by minimal edits; returns edit count."""
        with self.queue.muted():
            return _converge(self.source, build_source_model(self.container.snapshot()))


def _converge(cur: Model, want: Model) -> int:
    edits = 0
    want_ix = {e.uid: e for e in want.elements()}
    for u in sorted(cur.uids()):
        if u not in cur:
            continue
        e, w = cur.get(u), want_ix.get(u)
        if w is None or w.type_name != e.type_name or w.parent != e.parent or w.slot != e.slot:
            cur.delete_element(u)
            edits += 1
    order = []
    for r in want.roots:
        order.extend(reversed(want.subtree(r)))  # parents before children
    for u in order:
        w = want_ix[u]
        if u not in cur:
            cur.create_element(w.type_name, u, dict(w.attrs), w.parent, w.slot)
            edits += 1
            continue
        e = cur.get(u)
        for a, v in w.attrs.items():
            if e.attrs[a] != v:
                cur.set_attribute(u, a, v)
                edits += 1
    for u in order:
        w, e = want_ix[u], cur.get(u)
        for ref, spec in w.type.all_references().items():
            if spec.containment:
                continue
            for d in [d for d in e.refs[ref] if d not in w.refs[ref]]:
                cur.remove_reference(u, ref, d)
                edits += 1
            for d in [d for d in w.refs[ref] if d not in e.refs[ref]]:
                cur.add_reference(u, ref, d)
                edits += 1
    return edits
