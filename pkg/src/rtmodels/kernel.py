"""Typed attributed graph models with identity, containment and change notifications.

A :class:`Metamodel` is a fixed set of :class:`NodeType` definitions.  A
:class:`Model` holds :class:`ModelElement` instances of those types, keyed by
uid, arranged as a containment forest with additional cross references.
Every mutation emits a :class:`ChangeNotification` into each subscribed
:class:`NotificationQueue`.
"""

from __future__ import annotations

import itertools
import json
from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Iterator, Optional, Union

from . import guard
from .errors import (
    AbstractTypeInstantiation,
    AttributeKindMismatch,
    ContainmentError,
    DuplicateUid,
    MetamodelError,
    ModelError,
    UnknownAttribute,
    UnknownReference,
    UnknownUid,
)

TEXT = "text"
INTEGER = "integer"
BOOLEAN = "boolean"
ENUM = "enum"
_KINDS = (TEXT, INTEGER, BOOLEAN, ENUM)


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    kind: str = TEXT
    literals: tuple = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise MetamodelError(f"attribute {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == ENUM and not self.literals:
            raise MetamodelError(f"enumeration attribute {self.name!r} needs at least one literal")

    def default(self):
        return {TEXT: "", INTEGER: 0, BOOLEAN: False}.get(self.kind) if self.kind != ENUM else self.literals[0]

    def accepts(self, value) -> bool:
        if self.kind == TEXT:
            return isinstance(value, str)
        if self.kind == INTEGER:
            return isinstance(value, int) and not isinstance(value, bool)
        if self.kind == BOOLEAN:
            return isinstance(value, bool)
        return isinstance(value, str) and value in self.literals


@dataclass(frozen=True)
class ReferenceSpec:
    name: str
    target: str
    containment: bool = False
    lower: int = 0
    upper: Optional[int] = None  # None means unbounded

    def __post_init__(self):
        if self.lower < 0 or (self.upper is not None and (self.upper < 1 or self.upper < self.lower)):
            raise MetamodelError(f"reference {self.name!r}: bad bounds [{self.lower}, {self.upper}]")


class NodeType:
    def __init__(self, name: str, attributes: Iterable[AttributeSpec] = (),
                 references: Iterable[ReferenceSpec] = (), supertype: Optional[str] = None,
                 abstract: bool = False):
        self.name = name
        self.abstract = abstract
        self.supertype_name = supertype
        self.supertype: Optional[NodeType] = None
        self.attributes = tuple(attributes)
        self.references = tuple(references)
        self._attrs: dict[str, AttributeSpec] = {}
        self._refs: dict[str, ReferenceSpec] = {}
        self._ancestry: tuple[str, ...] = ()

    def chain(self) -> Iterator["NodeType"]:
        t: Optional[NodeType] = self
        while t is not None:
            yield t
            t = t.supertype

    def all_attributes(self) -> dict[str, AttributeSpec]:
        return self._attrs

    def all_references(self) -> dict[str, ReferenceSpec]:
        return self._refs

    def attribute(self, name: str) -> AttributeSpec:
        try:
            return self._attrs[name]
        except KeyError:
            raise UnknownAttribute(f"{self.name} has no attribute {name!r}") from None

    def reference(self, name: str) -> ReferenceSpec:
        try:
            return self._refs[name]
        except KeyError:
            raise UnknownReference(f"{self.name} has no reference {name!r}") from None

    def conforms_to(self, name: str) -> bool:
        return name in self._ancestry

    def describe(self) -> dict:
        return {
            "name": self.name,
            "abstract": self.abstract,
            "supertype": self.supertype_name,
            "attributes": [
                {"name": a.name, "kind": a.kind, **({"literals": list(a.literals)} if a.literals else {})}
                for a in self.attributes
            ],
            "references": [
                {"name": r.name, "target": r.target, "containment": r.containment,
                 "lower": r.lower, "upper": r.upper}
                for r in self.references
            ],
        }

    def __repr__(self):
        return f"NodeType({self.name!r})"


class Metamodel:
    """An immutable set of node types sharing one namespace."""

    def __init__(self, name: str, types: Iterable[NodeType]):
        self.name = name
        self.types: dict[str, NodeType] = {}
        for t in types:
            if t.name in self.types:
                raise MetamodelError(f"duplicate node type {t.name!r} in {name}")
            self.types[t.name] = t
        for t in self.types.values():
            if t.supertype_name is not None:
                if t.supertype_name not in self.types:
                    raise MetamodelError(f"{t.name}: unknown supertype {t.supertype_name!r}")
                t.supertype = self.types[t.supertype_name]
        for t in self.types.values():
            seen = set()
            for s in t.chain():
                if s.name in seen:
                    raise MetamodelError(f"supertype cycle through {t.name!r}")
                seen.add(s.name)
        for t in self.types.values():
            t._ancestry = tuple(s.name for s in t.chain())
            attrs: dict[str, AttributeSpec] = {}
            refs: dict[str, ReferenceSpec] = {}
            for s in reversed(list(t.chain())):
                for a in s.attributes:
                    if a.name in attrs or a.name in refs or a.name == "uid":
                        raise MetamodelError(f"{t.name}: feature {a.name!r} declared twice")
                    attrs[a.name] = a
                for r in s.references:
                    if r.name in attrs or r.name in refs:
                        raise MetamodelError(f"{t.name}: feature {r.name!r} declared twice")
                    if r.target not in self.types:
                        raise MetamodelError(f"{s.name}.{r.name}: unknown target {r.target!r}")
                    refs[r.name] = r
            t._attrs, t._refs = attrs, refs
        self._conforming = {
            n: frozenset(t.name for t in self.types.values() if t.conforms_to(n)) for n in self.types
        }

    def type(self, name: str) -> NodeType:
        try:
            return self.types[name]
        except KeyError:
            raise MetamodelError(f"{self.name} has no node type {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.types

    def conforming(self, name: str) -> frozenset:
        """Names of all types that conform to ``name`` (itself included)."""
        return self._conforming[name]

    def describe(self) -> dict:
        return {"metamodel": self.name, "types": [t.describe() for t in self.types.values()]}

    def __eq__(self, other):
        return isinstance(other, Metamodel) and self.describe() == other.describe()

    def __hash__(self):
        return hash(self.name)

    def __repr__(self):
        return f"Metamodel({self.name!r}, {len(self.types)} types)"


# -- notifications ------------------------------------------------------------

class ChangeKind(str, Enum):
    ELEMENT_CREATED = "ElementCreated"
    ELEMENT_DELETED = "ElementDeleted"
    ATTRIBUTE_SET = "AttributeSet"
    REFERENCE_ADDED = "ReferenceAdded"
    REFERENCE_REMOVED = "ReferenceRemoved"


@dataclass(frozen=True)
class ChangeNotification:
    kind: ChangeKind
    subject_uid: str
    feature: Optional[str] = None
    old_value: Any = None
    new_value: Any = None
    sequence_no: int = 0

    def related_uids(self) -> list[str]:
        """Uids this notification touches besides its subject."""
        out = []
        if self.kind in (ChangeKind.REFERENCE_ADDED, ChangeKind.REFERENCE_REMOVED):
            out.append(self.new_value if self.kind == ChangeKind.REFERENCE_ADDED else self.old_value)
        elif self.kind == ChangeKind.ELEMENT_CREATED and self.new_value.get("parent"):
            out.append(self.new_value["parent"])
        elif self.kind == ChangeKind.ELEMENT_DELETED and self.old_value.get("parent"):
            out.append(self.old_value["parent"])
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "subject": self.subject_uid, "feature": self.feature,
                "old": self.old_value, "new": self.new_value, "seq": self.sequence_no}


class NotificationQueue:
    """A per-consumer FIFO of change notifications.  Never drops entries."""

    def __init__(self):
        self._items: list[ChangeNotification] = []
        self._muted = 0

    def push(self, note: ChangeNotification):
        if not self._muted:
            self._items.append(note)

    def drain(self) -> list[ChangeNotification]:
        items, self._items = self._items, []
        return items

    def peek(self) -> tuple:
        return tuple(self._items)

    def clear(self) -> int:
        n = len(self._items)
        self._items = []
        return n

    @contextmanager
    def muted(self):
        self._muted += 1
        try:
            yield self
        finally:
            self._muted -= 1

    def __len__(self):
        return len(self._items)

    def __bool__(self):
        return bool(self._items)


# -- elements and models ------------------------------------------------------

class ModelElement:
    __slots__ = ("uid", "type", "attrs", "refs", "parent", "slot")

    def __init__(self, uid: str, type_: NodeType, attrs: dict, parent: Optional[str], slot: Optional[str]):
        self.uid = uid
        self.type = type_
        self.attrs = attrs
        self.refs: dict[str, list[str]] = {name: [] for name in type_.all_references()}
        self.parent = parent
        self.slot = slot

    @property
    def type_name(self) -> str:
        return self.type.name

    def get(self, name: str):
        if name == "uid":
            return self.uid
        if name not in self.attrs:
            raise UnknownAttribute(f"{self.type.name} has no attribute {name!r}")
        return self.attrs[name]

    def targets(self, ref: str) -> list[str]:
        if ref not in self.refs:
            raise UnknownReference(f"{self.type.name} has no reference {ref!r}")
        return list(self.refs[ref])

    def target(self, ref: str) -> Optional[str]:
        vals = self.targets(ref)
        return vals[0] if vals else None

    def is_a(self, type_name: str) -> bool:
        return self.type.conforms_to(type_name)

    def __repr__(self):
        return f"<{self.type.name} {self.uid}>"


UidLike = Union[str, ModelElement]


def _uid(x: UidLike) -> str:
    return x.uid if isinstance(x, ModelElement) else x


class Model:
    """A containment forest of typed elements with uid identity.

    All writes go through the methods on this class so that the uid index,
    type index, reverse-reference index and notification queues stay exact.
    """

    def __init__(self, metamodel: Metamodel, name: str = "", guarded: bool = False):
        self.metamodel = metamodel
        self.name = name or metamodel.name
        self.guarded = guarded
        self.roots: list[str] = []
        self._index: dict[str, ModelElement] = {}
        self._by_type: dict[str, set[str]] = {}
        self._incoming: dict[str, set[tuple[str, str]]] = {}
        self._seq = 0
        self._auto = itertools.count(1)
        self._queue = NotificationQueue()
        self._subscribers: list[NotificationQueue] = [self._queue]

    # -- reads

    def _check(self):
        if self.guarded:
            guard.check_access(self.name)

    def __contains__(self, uid: str) -> bool:
        return uid in self._index

    def __len__(self) -> int:
        return len(self._index)

    def get(self, uid: UidLike) -> ModelElement:
        self._check()
        uid = _uid(uid)
        try:
            return self._index[uid]
        except KeyError:
            raise UnknownUid(f"{self.name}: no element {uid!r}") from None

    def find(self, uid: str) -> Optional[ModelElement]:
        self._check()
        return self._index.get(uid)

    def elements(self) -> list[ModelElement]:
        self._check()
        return list(self._index.values())

    def uids(self) -> set[str]:
        self._check()
        return set(self._index)

    def elements_of(self, type_name: str) -> list[ModelElement]:
        """All elements whose type conforms to ``type_name``, sorted by uid."""
        self._check()
        uids: list[str] = []
        for t in self.metamodel.conforming(type_name):
            uids.extend(self._by_type.get(t, ()))
        return [self._index[u] for u in sorted(uids)]

    def count(self, type_name: Optional[str] = None) -> int:
        self._check()
        if type_name is None:
            return len(self._index)
        return sum(len(self._by_type.get(t, ())) for t in self.metamodel.conforming(type_name))

    def children(self, uid: UidLike, slot: str) -> list[ModelElement]:
        e = self.get(uid)
        return [self._index[c] for c in e.targets(slot)]

    def referrers(self, uid: UidLike, ref: Optional[str] = None) -> list[tuple[str, str]]:
        """(source uid, reference name) pairs pointing at ``uid``, sorted."""
        self._check()
        pairs = self._incoming.get(_uid(uid), ())
        return sorted(p for p in pairs if ref is None or p[1] == ref)

    def parent_of(self, uid: UidLike) -> Optional[ModelElement]:
        e = self.get(uid)
        return self._index[e.parent] if e.parent else None

    def subtree(self, uid: UidLike) -> list[str]:
        """Uids of ``uid``'s containment subtree in post-order (children first)."""
        out: list[str] = []

        def walk(u: str):
            e = self._index[u]
            for name, spec in e.type.all_references().items():
                if spec.containment:
                    for c in e.refs[name]:
                        walk(c)
            out.append(u)

        walk(self.get(uid).uid)
        return out

    # -- notifications

    def subscribe(self) -> NotificationQueue:
        q = NotificationQueue()
        self._subscribers.append(q)
        return q

    def unsubscribe(self, q: NotificationQueue):
        if q in self._subscribers and q is not self._queue:
            self._subscribers.remove(q)

    def drain_notifications(self) -> list[ChangeNotification]:
        return self._queue.drain()

    def _emit(self, kind: ChangeKind, subject: str, feature=None, old=None, new=None) -> ChangeNotification:
        self._seq += 1
        note = ChangeNotification(kind, subject, feature, old, new, self._seq)
        for q in self._subscribers:
            q.push(note)
        return note

    # -- writes

    def new_uid(self, type_name: str) -> str:
        initial = type_name[:1].upper() or "E"
        while True:
            uid = f"{initial}{next(self._auto)}"
            if uid not in self._index:
                return uid

    def create_element(self, type_name: str, uid: Optional[str] = None, attrs: Optional[dict] = None,
                       parent: Optional[UidLike] = None, slot: Optional[str] = None) -> ModelElement:
        """Create an element and attach it as a root (no parent) or under ``parent.slot``."""
        self._check()
        t = self.metamodel.type(type_name)
        if t.abstract:
            raise AbstractTypeInstantiation(f"{type_name} is abstract")
        if uid is None:
            uid = self.new_uid(type_name)
        if uid in self._index:
            raise DuplicateUid(f"{self.name}: uid {uid!r} already in use")
        values = {name: spec.default() for name, spec in t.all_attributes().items()}
        for name, value in (attrs or {}).items():
            spec = t.attribute(name)
            if not spec.accepts(value):
                raise AttributeKindMismatch(f"{type_name}.{name}: {value!r} is not a valid {spec.kind}")
            values[name] = value
        parent_uid = None
        if parent is not None:
            p = self.get(parent)
            parent_uid = p.uid
            if slot is None:
                raise ContainmentError("a parent needs a containment slot")
            spec = p.type.reference(slot)
            if not spec.containment:
                raise ContainmentError(f"{p.type.name}.{slot} is not a containment reference")
            if not t.conforms_to(spec.target):
                raise ContainmentError(f"{type_name} cannot be contained in {p.type.name}.{slot}")
        elif slot is not None:
            raise ContainmentError("slot given without parent")
        elem = ModelElement(uid, t, values, parent_uid, slot)
        self._index[uid] = elem
        self._by_type.setdefault(type_name, set()).add(uid)
        if parent_uid is None:
            self.roots.append(uid)
        else:
            self._index[parent_uid].refs[slot].append(uid)
            self._incoming.setdefault(uid, set()).add((parent_uid, slot))
        self._emit(ChangeKind.ELEMENT_CREATED, uid,
                   new={"type": type_name, "attrs": dict(values), "parent": parent_uid, "slot": slot})
        return elem

    def set_attribute(self, elem: UidLike, name: str, value) -> None:
        e = self.get(elem)
        if name == "uid":
            raise ModelError("uid is immutable")
        spec = e.type.attribute(name)
        if not spec.accepts(value):
            raise AttributeKindMismatch(f"{e.type.name}.{name}: {value!r} is not a valid {spec.kind}")
        old = e.attrs[name]
        e.attrs[name] = value
        # identity writes are reported too; consumers decide whether to coalesce
        self._emit(ChangeKind.ATTRIBUTE_SET, e.uid, name, old, value)

    def add_reference(self, src: UidLike, ref: str, dst: UidLike) -> None:
        s = self.get(src)
        d = self.get(dst)
        spec = s.type.reference(ref)
        if spec.containment:
            raise ContainmentError(f"{s.type.name}.{ref} is a containment; create the child under it")
        if not d.type.conforms_to(spec.target):
            raise UnknownReference(f"{s.type.name}.{ref} expects {spec.target}, got {d.type.name}")
        if d.uid in s.refs[ref]:
            raise ModelError(f"{s.uid}.{ref} already refers to {d.uid}")
        s.refs[ref].append(d.uid)
        self._incoming.setdefault(d.uid, set()).add((s.uid, ref))
        self._emit(ChangeKind.REFERENCE_ADDED, s.uid, ref, None, d.uid)

    def remove_reference(self, src: UidLike, ref: str, dst: UidLike) -> None:
        s = self.get(src)
        dst = _uid(dst)
        spec = s.type.reference(ref)
        if spec.containment:
            raise ContainmentError("use delete_element to remove contained elements")
        if dst not in s.refs[ref]:
            raise ModelError(f"{s.uid}.{ref} does not refer to {dst}")
        self._unlink(s.uid, ref, dst)
        self._emit(ChangeKind.REFERENCE_REMOVED, s.uid, ref, dst, None)

    def _unlink(self, src: str, ref: str, dst: str):
        self._index[src].refs[ref].remove(dst)
        inc = self._incoming.get(dst)
        if inc is not None:
            inc.discard((src, ref))

    def delete_element(self, uid: UidLike) -> list[ChangeNotification]:
        """Delete ``uid`` with its containment subtree.

        Cross references touching the subtree are cleared first (one
        ReferenceRemoved each), then one ElementDeleted per element,
        children before parents.  Returns the emitted notifications.
        """
        uid = self.get(uid).uid
        doomed = self.subtree(uid)
        inside = set(doomed)
        notes: list[ChangeNotification] = []
        for u in doomed:
            e = self._index[u]
            for ref, spec in e.type.all_references().items():
                if spec.containment:
                    continue
                for d in list(e.refs[ref]):
                    self._unlink(u, ref, d)
                    notes.append(self._emit(ChangeKind.REFERENCE_REMOVED, u, ref, d, None))
        for u in doomed:
            for src, ref in sorted(self._incoming.get(u, ())):
                if src in inside or self._index[src].type.reference(ref).containment:
                    continue
                self._unlink(src, ref, u)
                notes.append(self._emit(ChangeKind.REFERENCE_REMOVED, src, ref, u, None))
        for u in doomed:
            e = self._index.pop(u)
            self._by_type[e.type.name].discard(u)
            self._incoming.pop(u, None)
            if e.parent is None:
                self.roots.remove(u)
            elif e.parent in self._index:
                self._index[e.parent].refs[e.slot].remove(u)
            notes.append(self._emit(ChangeKind.ELEMENT_DELETED, u, None,
                                    {"type": e.type.name, "attrs": dict(e.attrs),
                                     "parent": e.parent, "slot": e.slot}, None))
        return notes

    # -- whole-model helpers

    def copy(self) -> "Model":
        """Deep copy of the element graph without any subscribers."""
        m = Model(self.metamodel, self.name, guarded=False)
        m.roots = list(self.roots)
        m._index = {}
        for u, e in self._index.items():
            ne = ModelElement(u, e.type, dict(e.attrs), e.parent, e.slot)
            ne.refs = {k: list(v) for k, v in e.refs.items()}
            m._index[u] = ne
        m._by_type = {k: set(v) for k, v in self._by_type.items()}
        m._incoming = {k: set(v) for k, v in self._incoming.items()}
        m._seq = self._seq
        return m

    def __repr__(self):
        return f"Model({self.name!r}, {len(self._index)} elements)"


# -- replay -------------------------------------------------------------------

def apply_notification(model: Model, note: ChangeNotification) -> None:
    """Re-apply a notification produced by another model onto ``model``."""
    k = note.kind
    if k == ChangeKind.ELEMENT_CREATED:
        nv = note.new_value
        model.create_element(nv["type"], note.subject_uid, nv["attrs"], nv["parent"], nv["slot"])
    elif k == ChangeKind.ATTRIBUTE_SET:
        model.set_attribute(note.subject_uid, note.feature, note.new_value)
    elif k == ChangeKind.REFERENCE_ADDED:
        model.add_reference(note.subject_uid, note.feature, note.new_value)
    elif k == ChangeKind.REFERENCE_REMOVED:
        model.remove_reference(note.subject_uid, note.feature, note.old_value)
    elif k == ChangeKind.ELEMENT_DELETED:
        model.delete_element(note.subject_uid)


# -- serialization ------------------------------------------------------------

def _element_dict(model: Model, e: ModelElement, ordered: bool) -> dict:
    refs: dict[str, list] = {}
    for name, spec in e.type.all_references().items():
        vals = e.refs[name]
        if not vals:
            continue
        if ordered:
            vals = sorted(vals)
        if spec.containment:
            refs[name] = [_element_dict(model, model._index[c], ordered) for c in vals]
        else:
            refs[name] = list(vals)
    return {"uid": e.uid, "type": e.type.name, "attrs": dict(sorted(e.attrs.items())), "refs": refs}


def to_dict(model: Model, ordered: bool = False) -> dict:
    """Hierarchical document; ``ordered=True`` sorts siblings by uid (isomorphism form)."""
    roots = sorted(model.roots) if ordered else model.roots
    return {"metamodel": model.metamodel.name,
            "elements": [_element_dict(model, model._index[r], ordered) for r in roots]}


def dumps(model: Model, ordered: bool = False) -> str:
    return json.dumps(to_dict(model, ordered), indent=2, sort_keys=True)


def from_dict(data: dict, metamodel: Metamodel, **kwargs) -> Model:
    if data.get("metamodel") != metamodel.name:
        raise ModelError(f"document is for {data.get('metamodel')!r}, not {metamodel.name!r}")
    model = Model(metamodel, **kwargs)
    cross: list[tuple[str, str, str]] = []

    def build(d: dict, parent: Optional[str], slot: Optional[str]):
        t = metamodel.type(d["type"])
        model.create_element(d["type"], d["uid"], d.get("attrs", {}), parent, slot)
        for name, vals in d.get("refs", {}).items():
            if t.reference(name).containment:
                for child in vals:
                    build(child, d["uid"], name)
            else:
                cross.extend((d["uid"], name, v) for v in vals)

    for root in data.get("elements", []):
        build(root, None, None)
    for src, ref, dst in cross:
        model.add_reference(src, ref, dst)
    model.drain_notifications()
    return model


def loads(text: str, metamodel: Metamodel, **kwargs) -> Model:
    return from_dict(json.loads(text), metamodel, **kwargs)


def canonical(model: Model) -> dict:
    """Order-insensitive flat view used for isomorphism checks."""
    out = {}
    for u, e in model._index.items():
        out[u] = {
            "type": e.type.name,
            "attrs": dict(e.attrs),
            "parent": e.parent,
            "slot": e.slot,
            "refs": {k: sorted(v) for k, v in e.refs.items()
                     if v and not e.type.reference(k).containment},
        }
    return out
