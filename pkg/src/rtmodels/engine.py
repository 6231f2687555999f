"""Incremental bidirectional model synchronization driven by triple rules.

The engine keeps a correspondence model between a source and a target
model.  ``transform_batch`` builds the destination from scratch;
``synchronize`` consumes the pending notifications of one side and repairs
the other: links whose origin no longer matches are retired and their
images deleted, new matches are translated, and attribute derivations are
re-evaluated against the final model state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .errors import (
    EngineStateError,
    InterleavedChanges,
    MalformedRule,
    RuleConflict,
    UnsynchronizableChange,
)
from .kernel import ChangeKind, Model
from .rules import (
    AGG,
    BWD,
    FWD,
    SOURCE,
    TARGET,
    AttrRef,
    Concat,
    Count,
    Lit,
    TripleRule,
    expr_refs,
    has_count,
    validate_rule_set,
)

LinkKey = tuple  # (corr_type, source_uids)


@dataclass
class CorrespondenceLink:
    corr_type: str
    rule: str
    source_uids: tuple
    target_uids: tuple
    # pattern variable -> element uid, or -> LinkKey for correspondence context nodes
    binding: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def key(self) -> LinkKey:
        return (self.corr_type, self.source_uids)

    def signature(self) -> tuple:
        return (self.corr_type, self.rule, self.source_uids, self.target_uids)

    def to_dict(self) -> dict:
        return {"corr_type": self.corr_type, "rule": self.rule,
                "source_uids": list(self.source_uids), "target_uids": list(self.target_uids)}


class CorrespondenceModel:
    """Set of correspondence links with source, target and dependency indexes."""

    def __init__(self):
        self.links: dict[LinkKey, CorrespondenceLink] = {}
        self.by_source: dict[str, set] = {}
        self.by_target: dict[str, set] = {}
        self._bound: dict[str, set] = {}       # any uid in a binding -> link keys
        self._dependents: dict[LinkKey, set] = {}  # link key -> links using it as context
        self._claims: dict[tuple, set] = {}     # (domain, created uid) -> link keys

    def __len__(self):
        return len(self.links)

    def __iter__(self):
        return iter(sorted(self.links.values(), key=lambda l: l.signature()))

    def __contains__(self, key) -> bool:
        return key in self.links

    def get(self, key) -> Optional[CorrespondenceLink]:
        return self.links.get(key)

    def add(self, link: CorrespondenceLink, created: Iterable[tuple] = ()):
        if link.key in self.links:
            raise RuleConflict(f"{link.corr_type} link for {link.source_uids} already exists")
        self.links[link.key] = link
        for u in link.source_uids:
            self.by_source.setdefault(u, set()).add(link.key)
        for u in link.target_uids:
            self.by_target.setdefault(u, set()).add(link.key)
        for v in link.binding.values():
            if isinstance(v, tuple):
                self._dependents.setdefault(v, set()).add(link.key)
            else:
                self._bound.setdefault(v, set()).add(link.key)
        for c in created:
            self._claims.setdefault(c, set()).add(link.key)

    def remove(self, key) -> CorrespondenceLink:
        link = self.links.pop(key)
        for idx, uids in ((self.by_source, link.source_uids), (self.by_target, link.target_uids)):
            for u in uids:
                idx[u].discard(key)
                if not idx[u]:
                    del idx[u]
        for v in link.binding.values():
            idx = self._dependents if isinstance(v, tuple) else self._bound
            s = idx.get(v)
            if s is not None:
                s.discard(key)
                if not s:
                    del idx[v]
        for c in [c for c, ks in self._claims.items() if key in ks]:
            self._claims[c].discard(key)
            if not self._claims[c]:
                del self._claims[c]
        return link

    def links_binding(self, uid: str) -> set:
        return set(self._bound.get(uid, ()))

    def dependents(self, key) -> set:
        return set(self._dependents.get(key, ()))

    def claims(self, domain: str, uid: str) -> set:
        return set(self._claims.get((domain, uid), ()))

    def of_type(self, corr_type: str) -> list:
        return sorted((l for l in self.links.values() if l.corr_type == corr_type), key=lambda l: l.key)

    def signatures(self) -> set:
        return {l.signature() for l in self.links.values()}

    def to_list(self) -> list:
        return [l.to_dict() for l in self]


@dataclass
class SyncReport:
    direction: str
    rules_fired: list = field(default_factory=list)
    created: list = field(default_factory=list)
    deleted: list = field(default_factory=list)
    updated: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"direction": self.direction, "rules_fired": self.rules_fired,
                "created": self.created, "deleted": self.deleted,
                "updated": [list(u) for u in self.updated]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @property
    def empty(self) -> bool:
        return not (self.rules_fired or self.created or self.deleted or self.updated)


class _Run:
    """Book-keeping for one batch or incremental pass."""

    def __init__(self, direction: str, full: bool):
        self.direction = direction
        self.full = full
        self.origin = SOURCE if direction == FWD else TARGET
        self.dest = TARGET if direction == FWD else SOURCE
        self.report = SyncReport("forward" if direction == FWD else "backward")
        self.dirty: dict[str, set] = {SOURCE: set(), TARGET: set()}
        self.dirty_links: set = set()
        self.touched: set = set()     # (domain, uid, attr) written by the origin side
        self.new_links: set = set()
        self.agg_images: set = set()  # (rule name, var, uid)
        # incremental frontier not yet looked at by revalidation
        self.pending_uids: set = set()
        self.pending_links: set = set()

    def mark(self, domain: str, uid: str):
        if uid not in self.dirty[domain]:
            self.dirty[domain].add(uid)
        self.pending_uids.add((domain, uid))

    def mark_link(self, key):
        self.dirty_links.add(key)
        self.pending_links.add(key)


def _direction(d: str) -> str:
    d = {"forward": FWD, "backward": BWD}.get(d, d)
    if d not in (FWD, BWD):
        raise ValueError(f"unknown direction {d!r}")
    return d


class SyncEngine:
    """Keeps ``source`` and ``target`` consistent under an ordered rule list."""

    def __init__(self, source: Model, target: Model, rules: Optional[list] = None):
        self.source = source
        self.target = target
        self.corr = CorrespondenceModel()
        self.pending_source = source.subscribe()
        self.pending_target = target.subscribe()
        self.rules: list[TripleRule] = []
        if rules is not None:
            self.register_rules(rules)

    # -- public API

    def register_rules(self, rules: list) -> None:
        if self.pending_source or self.pending_target:
            raise EngineStateError("cannot replace rules while changes are pending")
        rules = list(rules)
        validate_rule_set(rules)
        for r in rules:
            for n in r.nodes:
                mm = self._model(n.domain).metamodel
                if n.type_name not in mm:
                    raise MalformedRule(f"rule {r.name}: {mm.name} has no type {n.type_name}")
        self.rules = rules

    def transform_batch(self, direction: str = FWD) -> SyncReport:
        direction = _direction(direction)
        run = _Run(direction, full=True)
        if len(self._model(run.dest)) or len(self.corr):
            raise EngineStateError("batch transformation needs an empty destination and correspondence model")
        self._queue(run.origin).clear()
        with self._queue(run.dest).muted():
            self._execute(run)
        return run.report

    def synchronize(self, direction: str = FWD) -> SyncReport:
        direction = _direction(direction)
        run = _Run(direction, full=False)
        origin_q, dest_q = self._queue(run.origin), self._queue(run.dest)
        if dest_q:
            raise InterleavedChanges(
                f"{len(dest_q)} pending change(s) on the {run.dest} side; synchronize that direction first")
        notes = origin_q.peek()
        created = self._precheck(run, notes)
        origin_q.clear()
        for n in notes:
            run.mark(run.origin, n.subject_uid)
            for u in n.related_uids():
                run.mark(run.origin, u)
            if n.kind == ChangeKind.ATTRIBUTE_SET:
                run.touched.add((run.origin, n.subject_uid, n.feature))
        with dest_q.muted():
            self._execute(run)
        origin = self._model(run.origin)
        for u in sorted(created):
            if u in origin and not self._covered_anywhere(run.origin, u):
                raise UnsynchronizableChange(
                    f"{origin.get(u).type_name} {u} was created on the {run.origin} side "
                    f"but no rule can translate it {'forward' if direction == FWD else 'backward'}")
        return run.report

    def pending(self) -> dict:
        return {"source": len(self.pending_source), "target": len(self.pending_target)}

    def close(self):
        self.source.unsubscribe(self.pending_source)
        self.target.unsubscribe(self.pending_target)

    # -- helpers

    def _model(self, domain: str) -> Model:
        return self.source if domain == SOURCE else self.target

    def _queue(self, domain: str):
        return self.pending_source if domain == SOURCE else self.pending_target

    def _rule(self, name: str) -> TripleRule:
        for r in self.rules:
            if r.name == name:
                return r
        raise KeyError(name)

    def _covered_anywhere(self, domain: str, uid: str) -> bool:
        idx = self.corr.by_source if domain == SOURCE else self.corr.by_target
        return uid in idx

    def _precheck(self, run: _Run, notes) -> set:
        """Refuse origin-side creations that no rule can translate, before touching anything."""
        created: set = set()
        if run.direction != BWD:
            return created  # origin-only concepts are legal in the forward direction
        origin = self._model(run.origin)
        for n in notes:
            if n.kind == ChangeKind.ELEMENT_CREATED:
                created.add(n.subject_uid)
            elif n.kind == ChangeKind.ELEMENT_DELETED:
                created.discard(n.subject_uid)
        for u in sorted(created):
            e = origin.find(u)
            if e is None:
                continue
            if not any(r.creatable(run.direction) and any(
                    n.domain == run.origin and n.creates and e.is_a(n.type_name) for n in r.nodes)
                    for r in self.rules):
                raise UnsynchronizableChange(
                    f"no rule translates a {e.type_name} created on the {run.origin} side ({u})")
        return created

    # -- the pass

    def _execute(self, run: _Run):
        # derived values can break constraints or enable matches, so repeat until no write happens
        while True:
            self._revalidate(run)
            self._create(run)
            writes = len(run.report.updated)
            self._derive(run)
            run.touched.clear()  # identity writes from the origin are forwarded once
            self._recount(run)
            if len(run.report.updated) == writes:
                return

    # revalidation ---------------------------------------------------------

    def _revalidate(self, run: _Run):
        if run.full:
            keys = set(self.corr.links)
        else:
            keys = set()
        while True:
            for dom, u in run.pending_uids:
                keys |= self.corr.links_binding(u)
            for k in run.pending_links:
                keys |= self.corr.dependents(k)
            run.pending_uids, run.pending_links = set(), set()
            if not keys:
                return
            for key in sorted(keys):
                link = self.corr.get(key)
                if link is None:
                    continue
                rule = self._rule(link.rule)
                if not self._side_ok(rule, link, run.origin, with_context=True):
                    self._retire(run, link)
                elif not self._side_ok(rule, link, run.dest, with_context=False) \
                        or not self._uids_hold(rule, link, run):
                    self._retire(run, link)
            keys = set()

    def _side_ok(self, rule: TripleRule, link: CorrespondenceLink, domain: str, with_context: bool) -> bool:
        model = self._model(domain)
        b = link.binding
        for n in rule.nodes_in(domain):
            e = model.find(b[n.var])
            if e is None or not e.is_a(n.type_name):
                return False
        for edge in rule.edges_in(domain):
            if b[edge.dst] not in model.get(b[edge.src]).refs[edge.ref]:
                return False
        if with_context:
            for c in rule.ctx_corr:
                other = self.corr.get(b[c.var])
                if other is None or other.corr_type != c.corr_type:
                    return False
                if tuple(b[v] for v in c.sources) != other.source_uids:
                    return False
                if tuple(b[v] for v in c.targets) != other.target_uids:
                    return False
            for con in rule.constraints:
                if not self._holds(rule, con, b):
                    return False
        return True

    def _uids_hold(self, rule: TripleRule, link: CorrespondenceLink, run: _Run) -> bool:
        # an image whose derived uid changed (e.g. a shared failure keyed by exception type) is stale
        for n in rule.creates_in(run.dest):
            d = rule.uid_derivation(run.direction, n.var)
            if d is not None and self._eval(rule, d.expr, link.binding) != link.binding[n.var]:
                return False
        return True

    def _retire(self, run: _Run, link: CorrespondenceLink):
        rule = self._rule(link.rule)
        self.corr.remove(link.key)
        run.mark_link(link.key)
        for var, v in link.binding.items():
            if not isinstance(v, tuple):
                run.mark(rule.node(var).domain, v)
        dest = self._model(run.dest)
        for n in rule.creates_in(run.dest):
            uid = link.binding[n.var]
            if uid not in dest:
                continue
            if n.mode == AGG:
                if any(l.binding.get(n.var) == uid for l in self.corr.of_type(link.corr_type)):
                    run.agg_images.add((rule.name, n.var, uid))
                    continue
            for note in dest.delete_element(uid):
                run.mark(run.dest, note.subject_uid)
                for r in note.related_uids():
                    run.mark(run.dest, r)
                if note.kind == ChangeKind.ELEMENT_DELETED:
                    run.report.deleted.append(note.subject_uid)

    # matching -------------------------------------------------------------

    def _pattern_vars(self, rule: TripleRule, run: _Run) -> list:
        """Variables bound by matching in this direction: whole origin side, destination context, corr context."""
        out = [n.var for n in rule.nodes if n.domain == run.origin or not n.creates]
        return out + [c.var for c in rule.ctx_corr]

    def _matches(self, rule: TripleRule, run: _Run) -> list[dict]:
        vars_ = self._pattern_vars(rule, run)
        seen: dict[tuple, dict] = {}
        seeds: list[dict] = []
        if run.full:
            seeds.append({})
        else:
            for var in vars_:
                if rule.has_var(var):
                    dom = rule.node(var).domain
                    for u in run.dirty[dom]:
                        seeds.append({var: u})
                else:
                    for k in run.dirty_links | run.new_links:
                        seeds.append({var: k})
        for seed in seeds:
            if not all(self._consistent(rule, run, seed, v, x) for v, x in seed.items()):
                continue
            for b in self._search(rule, run, dict(seed), vars_):
                sig = tuple(sorted((k, str(v)) for k, v in b.items()))
                seen.setdefault(sig, b)
        return list(seen.values())

    def _search(self, rule, run, binding, vars_):
        free = [v for v in vars_ if v not in binding]
        if not free:
            if all(self._holds(rule, c, binding) for c in rule.constraints
                   if all(r.var in binding for r in expr_refs(c.rhs)) and c.var in binding):
                yield dict(binding)
            return
        best = None
        for v in free:
            cands = self._generate(rule, run, binding, v)
            if cands is not None and (best is None or len(cands) < len(best[1])):
                best = (v, cands)
        if best is None:
            v = free[0]
            if rule.has_var(v):
                n = rule.node(v)
                best = (v, [e.uid for e in self._model(n.domain).elements_of(n.type_name)])
            else:
                c = next(c for c in rule.ctx_corr if c.var == v)
                best = (v, [l.key for l in self.corr.of_type(c.corr_type)])
        var, cands = best
        for x in cands:
            if self._consistent(rule, run, binding, var, x):
                binding[var] = x
                yield from self._search(rule, run, binding, vars_)
                del binding[var]

    def _generate(self, rule, run, binding, var) -> Optional[list]:
        """Candidates for ``var`` reachable from already-bound variables, or None."""
        if rule.has_var(var):
            node = rule.node(var)
            model = self._model(node.domain)
            for e in rule.edges_in(node.domain):
                if e.dst == var and e.src in binding:
                    src = model.find(binding[e.src])
                    return list(src.refs[e.ref]) if src else []
                if e.src == var and e.dst in binding:
                    return [s for s, _ in model.referrers(binding[e.dst], e.ref)]
            for c in rule.ctx_corr:
                if c.var in binding:
                    link = self.corr.get(binding[c.var])
                    if link is None:
                        return []
                    if var in c.sources:
                        return [link.source_uids[c.sources.index(var)]]
                    if var in c.targets:
                        return [link.target_uids[c.targets.index(var)]]
            return None
        c = next(c for c in rule.ctx_corr if c.var == var)
        for i, v in enumerate(c.sources):
            if v in binding:
                return [k for k in sorted(self.corr.by_source.get(binding[v], ()))
                        if k[0] == c.corr_type]
        for i, v in enumerate(c.targets):
            if v in binding:
                return [k for k in sorted(self.corr.by_target.get(binding[v], ()))
                        if k[0] == c.corr_type]
        return None

    def _consistent(self, rule, run, binding, var, x) -> bool:
        if rule.has_var(var):
            node = rule.node(var)
            model = self._model(node.domain)
            e = model.find(x)
            if e is None or not e.is_a(node.type_name):
                return False
            for other, y in binding.items():
                if other != var and rule.has_var(other) and rule.node(other).domain == node.domain and y == x:
                    return False
            for edge in rule.edges_in(node.domain):
                if edge.src == var and edge.dst in binding and binding[edge.dst] not in e.refs[edge.ref]:
                    return False
                if edge.dst == var and edge.src in binding:
                    src = model.find(binding[edge.src])
                    if src is None or x not in src.refs[edge.ref]:
                        return False
            for c in rule.ctx_corr:
                if c.var in binding and not self._corr_agrees(c, binding[c.var], {**binding, var: x}):
                    return False
            return True
        c = next(c for c in rule.ctx_corr if c.var == var)
        if any(k != var and y == x for k, y in binding.items()):
            return False
        return self._corr_agrees(c, x, binding)

    def _corr_agrees(self, c, key, binding) -> bool:
        link = self.corr.get(key)
        if link is None or link.corr_type != c.corr_type:
            return False
        if len(link.source_uids) != len(c.sources) or len(link.target_uids) != len(c.targets):
            return False
        for v, u in zip(c.sources, link.source_uids):
            if v in binding and binding[v] != u:
                return False
        for v, u in zip(c.targets, link.target_uids):
            if v in binding and binding[v] != u:
                return False
        return True

    # creation -------------------------------------------------------------

    def _create(self, run: _Run):
        progress = True
        while progress:
            progress = False
            for rule in self.rules:
                if not rule.creatable(run.direction):
                    continue
                candidates = []
                for b in self._matches(rule, run):
                    origin_created = tuple(b[n.var] for n in rule.creates_in(run.origin))
                    candidates.append((origin_created, sorted((k, str(v)) for k, v in b.items()), b))
                candidates.sort(key=lambda t: (t[0], t[1]))
                for _, _, b in candidates:
                    if self._covered(rule, run, b):
                        continue
                    self._apply(rule, run, b)
                    progress = True

    def _covered(self, rule: TripleRule, run: _Run, b: dict) -> bool:
        covered = False
        for n in rule.creates_in(run.origin):
            for key in self.corr.claims(run.origin, b[n.var]):
                other = self.corr.get(key)
                if other.rule != rule.name:
                    raise RuleConflict(
                        f"rules {other.rule} and {rule.name} both claim {n.type_name} {b[n.var]}")
                covered = True
        return covered

    def _apply(self, rule: TripleRule, run: _Run, b: dict):
        dest = self._model(run.dest)
        dest_mm = dest.metamodel
        pending = rule.creates_in(run.dest)
        created: list[str] = []
        while pending:
            ready = []
            for n in pending:
                edge = rule.containment_edge(n.var, dest_mm)
                if edge is None or edge.src in b:
                    ready.append((n, edge))
            if not ready:
                raise MalformedRule(f"rule {rule.name}: cyclic containment among created nodes")
            for n, edge in ready:
                pending.remove(n)
                uid = self._eval(rule, rule.uid_derivation(run.direction, n.var).expr, b)
                parent = b[edge.src] if edge else None
                existing = dest.find(uid)
                if existing is not None:
                    if n.mode == AGG and existing.is_a(n.type_name) and existing.parent == parent:
                        b[n.var] = uid
                        run.agg_images.add((rule.name, n.var, uid))
                        continue
                    raise RuleConflict(f"rule {rule.name}: derived uid {uid!r} already exists in {dest.name}")
                attrs = {}
                for d in rule.derivations_for(run.direction):
                    if d.var == n.var and d.attr != "uid" and not has_count(d.expr) \
                            and all(r.var in b for r in expr_refs(d.expr)):
                        attrs[d.attr] = self._eval(rule, d.expr, b)
                dest.create_element(n.type_name, uid, attrs, parent, edge.ref if edge else None)
                b[n.var] = uid
                created.append(uid)
                run.mark(run.dest, uid)
                if n.mode == AGG:
                    run.agg_images.add((rule.name, n.var, uid))
        for edge in rule.edges_in(run.dest):
            if not (rule.node(edge.src).creates or rule.node(edge.dst).creates):
                continue
            src = dest.get(b[edge.src])
            if src.type.reference(edge.ref).containment or b[edge.dst] in src.refs[edge.ref]:
                continue
            dest.add_reference(src.uid, edge.ref, b[edge.dst])
        corr = rule.new_corr
        link = CorrespondenceLink(corr.corr_type, rule.name,
                                  tuple(b[v] for v in corr.sources),
                                  tuple(b[v] for v in corr.targets), dict(b))
        claims = [(run.origin, b[n.var]) for n in rule.creates_in(run.origin)]
        claims += [(run.dest, b[n.var]) for n in rule.creates_in(run.dest) if n.mode != AGG]
        self.corr.add(link, claims)
        run.new_links.add(link.key)
        run.mark_link(link.key)
        subjects = [b[n.var] for n in rule.creates_in(run.origin)]
        for u in subjects:
            run.mark(run.origin, u)
        run.report.rules_fired.append({"rule": rule.name, "subject_uids": subjects})
        run.report.created.extend(created)

    # attributes -----------------------------------------------------------

    def _derive(self, run: _Run):
        if run.full:
            keys = set(self.corr.links)
        else:
            keys = set(run.new_links)
            for dom in (SOURCE, TARGET):
                for u in run.dirty[dom]:
                    keys |= self.corr.links_binding(u)
        done: set = set()
        while keys:
            key = min(keys)
            keys.discard(key)
            done.add(key)
            link = self.corr.get(key)
            if link is None:
                continue
            rule = self._rule(link.rule)
            for d in rule.derivations_for(run.direction):
                if d.attr == "uid" or has_count(d.expr):
                    continue
                if rule.node(d.var).domain != run.dest:
                    continue
                elem = self._model(run.dest).find(link.binding[d.var])
                if elem is None:
                    continue
                value = self._eval(rule, d.expr, link.binding)
                forced = any((rule.node(r.var).domain, link.binding[r.var], r.attr) in run.touched
                             for r in expr_refs(d.expr))
                if self._write(run, elem, d.attr, value, forced):
                    keys |= self.corr.links_binding(elem.uid) - done

    def _recount(self, run: _Run):
        for rule_name, var, uid in sorted(run.agg_images):
            rule = self._rule(rule_name)
            elem = self._model(run.dest).find(uid)
            if elem is None:
                continue
            group = [l for l in self.corr.of_type(rule.new_corr.corr_type) if l.binding.get(var) == uid]
            for d in rule.derivations_for(run.direction):
                if d.var != var or not has_count(d.expr) or not group:
                    continue
                value = self._eval(rule, d.expr, group[0].binding, group=group)
                self._write(run, elem, d.attr, value, False)

    def _write(self, run: _Run, elem, attr: str, value, forced: bool):
        if elem.get(attr) == value and not forced:
            return False
        self._model(run.dest).set_attribute(elem.uid, attr, value)
        run.report.updated.append((elem.uid, attr))
        run.mark(run.dest, elem.uid)
        return True

    # expressions ----------------------------------------------------------

    def _eval(self, rule: TripleRule, expr, b: dict, group: Optional[list] = None):
        if isinstance(expr, Lit):
            return expr.value
        if isinstance(expr, AttrRef):
            return self._model(rule.node(expr.var).domain).get(b[expr.var]).get(expr.attr)
        if isinstance(expr, Count):
            if group is None:
                return 1
            return len({l.binding[expr.var] for l in group})
        if isinstance(expr, Concat):
            return "".join(_text(self._eval(rule, p, b, group)) for p in expr.parts)
        raise TypeError(f"unsupported expression {expr!r}")

    def _holds(self, rule: TripleRule, con, b: dict) -> bool:
        left = self._model(rule.node(con.var).domain).find(b[con.var])
        if left is None:
            return False
        if isinstance(con.rhs, AttrRef):
            other = self._model(rule.node(con.rhs.var).domain).find(b[con.rhs.var])
            if other is None:
                return False
            return left.get(con.attr) == other.get(con.rhs.attr)
        return left.get(con.attr) == self._eval(rule, con.rhs, b)


def _text(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)
