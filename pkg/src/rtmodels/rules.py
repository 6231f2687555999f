"""Declarative triple rules: source, correspondence and target patterns plus attribute derivations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

from .errors import MalformedRule

SOURCE = "source"
TARGET = "target"
CTX = "ctx"
NEW = "new"
AGG = "agg"  # created on first match, shared by later matches that derive the same uid
FWD = "fwd"
BWD = "bwd"


@dataclass(frozen=True)
class Lit:
    value: Union[str, int, bool]


@dataclass(frozen=True)
class AttrRef:
    var: str
    attr: str


@dataclass(frozen=True)
class Count:
    """Number of live correspondence links of the rule sharing the image bound to ``var``."""
    var: str


@dataclass(frozen=True)
class Concat:
    parts: tuple


Expr = Union[Lit, AttrRef, Count, Concat]


def expr_refs(e: Expr) -> list[AttrRef]:
    if isinstance(e, AttrRef):
        return [e]
    if isinstance(e, Concat):
        return [r for p in e.parts for r in expr_refs(p)]
    return []


def has_count(e: Expr) -> bool:
    if isinstance(e, Count):
        return True
    return isinstance(e, Concat) and any(has_count(p) for p in e.parts)


@dataclass(frozen=True, order=True)
class PatternNode:
    domain: str
    var: str
    type_name: str
    mode: str

    @property
    def creates(self) -> bool:
        return self.mode in (NEW, AGG)


@dataclass(frozen=True, order=True)
class PatternEdge:
    domain: str
    src: str
    ref: str
    dst: str


@dataclass(frozen=True, order=True)
class CorrNode:
    var: str
    corr_type: str
    mode: str
    sources: tuple
    targets: tuple


@dataclass(frozen=True)
class Derivation:
    direction: str
    var: str
    attr: str
    expr: Expr

    def sort_key(self):
        return (self.direction, self.var, self.attr)


@dataclass(frozen=True)
class Constraint:
    var: str
    attr: str
    rhs: Expr  # Lit or AttrRef

    def sort_key(self):
        return (self.var, self.attr, repr(self.rhs))


@dataclass(frozen=True)
class TripleRule:
    """A triple rule in canonical form; collections are sorted so equal rules compare equal."""

    name: str
    nodes: tuple = ()
    edges: tuple = ()
    corr_nodes: tuple = ()
    derivations: tuple = ()
    constraints: tuple = ()
    _index: dict = field(default=None, compare=False, repr=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda n: (n.domain, n.var))))
        object.__setattr__(self, "edges", tuple(sorted(self.edges)))
        object.__setattr__(self, "corr_nodes", tuple(sorted(self.corr_nodes, key=lambda c: c.var)))
        object.__setattr__(self, "derivations", tuple(sorted(self.derivations, key=Derivation.sort_key)))
        object.__setattr__(self, "constraints", tuple(sorted(self.constraints, key=Constraint.sort_key)))
        object.__setattr__(self, "_index", {n.var: n for n in self.nodes})

    # -- queries

    def node(self, var: str) -> PatternNode:
        return self._index[var]

    def has_var(self, var: str) -> bool:
        return var in self._index

    def nodes_in(self, domain: str) -> list[PatternNode]:
        return [n for n in self.nodes if n.domain == domain]

    def creates_in(self, domain: str) -> list[PatternNode]:
        return [n for n in self.nodes if n.domain == domain and n.creates]

    def edges_in(self, domain: str) -> list[PatternEdge]:
        return [e for e in self.edges if e.domain == domain]

    @property
    def new_corr(self) -> CorrNode:
        return next(c for c in self.corr_nodes if c.mode == NEW)

    @property
    def ctx_corr(self) -> list[CorrNode]:
        return [c for c in self.corr_nodes if c.mode == CTX]

    def derivations_for(self, direction: str) -> list[Derivation]:
        return [d for d in self.derivations if d.direction == direction]

    def uid_derivation(self, direction: str, var: str):
        for d in self.derivations:
            if d.direction == direction and d.var == var and d.attr == "uid":
                return d
        return None

    def creatable(self, direction: str) -> bool:
        """A rule creates in a direction only when every created node there has a uid derivation."""
        dest = TARGET if direction == FWD else SOURCE
        creates = self.creates_in(dest)
        return bool(creates) and all(self.uid_derivation(direction, n.var) for n in creates)

    def containment_edge(self, var: str, metamodel) -> "PatternEdge | None":
        node = self.node(var)
        for e in self.edges_in(node.domain):
            if e.dst == var:
                src_type = metamodel.type(self.node(e.src).type_name)
                if src_type.reference(e.ref).containment:
                    return e
        return None

    # -- structural checks

    def validate(self) -> None:
        """Raise :class:`MalformedRule` unless the rule has the required shape."""
        news = [c for c in self.corr_nodes if c.mode == NEW]
        if len(news) != 1:
            raise MalformedRule(f"rule {self.name}: needs exactly one created correspondence node, has {len(news)}")
        corr = news[0]
        src_creates = {n.var for n in self.creates_in(SOURCE)}
        tgt_creates = {n.var for n in self.creates_in(TARGET)}
        if not src_creates:
            raise MalformedRule(f"rule {self.name}: creates nothing in the source pattern")
        if set(corr.sources) != src_creates:
            raise MalformedRule(f"rule {self.name}: {corr.var} must reference exactly the created source nodes")
        if set(corr.targets) != tgt_creates:
            raise MalformedRule(f"rule {self.name}: {corr.var} must reference exactly the created target nodes")
        for c in self.ctx_corr:
            for v in c.sources:
                if not self.has_var(v) or self.node(v).domain != SOURCE or self.node(v).creates:
                    raise MalformedRule(f"rule {self.name}: {c.var} needs source context node {v}")
            for v in c.targets:
                if not self.has_var(v) or self.node(v).domain != TARGET or self.node(v).creates:
                    raise MalformedRule(f"rule {self.name}: {c.var} needs target context node {v}")
        if any(n.mode == AGG for n in self.nodes if n.domain == SOURCE):
            raise MalformedRule(f"rule {self.name}: shared (agg) nodes are only allowed in the target pattern")
        self._check_connected()

    def _check_connected(self):
        vars_ = [n.var for n in self.nodes] + [c.var for c in self.corr_nodes]
        if not vars_:
            return
        adj: dict[str, set] = {v: set() for v in vars_}
        for e in self.edges:
            adj[e.src].add(e.dst)
            adj[e.dst].add(e.src)
        for c in self.corr_nodes:
            for v in c.sources + c.targets:
                if v in adj:
                    adj[c.var].add(v)
                    adj[v].add(c.var)
        seen = {vars_[0]}
        todo = [vars_[0]]
        while todo:
            for w in adj[todo.pop()]:
                if w not in seen:
                    seen.add(w)
                    todo.append(w)
        if len(seen) != len(vars_):
            loose = sorted(set(vars_) - seen)
            raise MalformedRule(f"rule {self.name}: pattern is not connected ({', '.join(loose)} detached)")


def validate_rule_set(rules) -> None:
    names = set()
    for r in rules:
        if r.name in names:
            raise MalformedRule(f"duplicate rule name {r.name!r}")
        names.add(r.name)
        r.validate()
