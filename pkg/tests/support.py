"""Shared helpers for the test suite: worlds, oracles and random source edits."""

from __future__ import annotations

import random

from rtmodels import guard
from rtmodels.adaptation import ModuleFactory
from rtmodels.dsl import load_builtin_rules
from rtmodels.engine import SyncEngine
from rtmodels.kernel import Model, canonical, dumps
from rtmodels.metamodels import build_source_metamodel, build_target_metamodel
from rtmodels.sim import naming
from rtmodels.sim.naming import BeanTemplate, ModuleTemplate

RULES = load_builtin_rules().rules
EXCEPTIONS = ("LookupFailure", "TimeoutException", "IOError")


def target_model() -> Model:
    return Model(build_target_metamodel(), "target")


def batch_image(source: Model):
    """Oracle: a from-scratch forward transformation of a copy of ``source``."""
    with guard.platform_zone():
        src = source.copy()
    tgt = target_model()
    eng = SyncEngine(src, tgt, RULES)
    eng.transform_batch("forward")
    return tgt, eng


def same_as_batch(engine: SyncEngine) -> tuple[bool, str]:
    tgt, eng = batch_image(engine.source)
    if canonical(tgt) != canonical(engine.target):
        a, b = canonical(tgt), canonical(engine.target)
        diff = sorted(set(a) ^ set(b)) or [u for u in a if a[u] != b.get(u)]
        return False, f"target differs at {diff[:5]}"
    if eng.corr.signatures() != engine.corr.signatures():
        return False, f"corr differs: {sorted(eng.corr.signatures() ^ engine.corr.signatures())[:3]}"
    return True, ""


def snapshot_all(world) -> tuple:
    """Byte-level dumps of source, target, corr and container."""
    import json
    with guard.platform_zone():
        return (dumps(world.source), dumps(world.target),
                json.dumps(world.engine.corr.to_list(), sort_keys=True),
                json.dumps(world.container.snapshot(), sort_keys=True))


def clone_template_oracle(module: str, tpl: ModuleTemplate) -> set:
    """Independent expectation of a module's bean structure, as (uid, type, name, type uid) rows."""
    rows = {(module, "EjbModule", module, tpl.name)}
    for b in tpl.beans:
        bu = f"{module}.{b.name}"
        kind = "SessionBean" if b.kind == "session" else "MessageDrivenBean"
        rows.add((bu, kind, b.name, f"{tpl.name}.{b.name}"))
        for i in b.interfaces:
            rows.add((f"{bu}.if.{i}", "EjbInterface", i, f"{tpl.name}.{b.name}.if.{i}"))
        for r, _ in b.references:
            rows.add((f"{bu}.ref.{r}", "EjbReference", r, f"{tpl.name}.{b.name}.ref.{r}"))
        for e in b.entries:
            rows.add((f"{bu}.env.{e}", "SimpleEnvironmentEntry", e, f"{tpl.name}.{b.name}.env.{e}"))
    return rows


def module_structure(source: Model, module: str) -> set:
    rows = set()
    for u in source.subtree(module):
        e = source.get(u)
        if e.type_name in ("BeanInstance", "Call", "ThrownException"):
            continue
        rows.add((u, e.type_name, e.get("name"), e.target("type")))
    return rows


# -- random source edits ------------------------------------------------------

class SourceEditor:
    """Applies random but metamodel-respecting edits to a source model."""

    def __init__(self, model: Model, rng: random.Random):
        self.m = model
        self.rng = rng
        self.n = 0

    def _uid(self, stem: str) -> str:
        self.n += 1
        return f"x{stem}{self.n}"

    def _pick(self, type_name: str):
        xs = self.m.elements_of(type_name)
        return self.rng.choice(xs) if xs else None

    def edit(self) -> str:
        ops = [
            (self.add_interface, 4), (self.add_session_bean, 2), (self.add_reference, 2),
            (self.add_entry, 2), (self.add_module, 2), (self.add_module_type, 1), (self.delete, 4),
            (self.set_state, 3), (self.set_value, 2), (self.rename, 2), (self.set_exception_type, 1),
            (self.set_ref_interface, 2), (self.add_connector, 3), (self.add_call, 5),
            (self.retype_interface, 2),
        ]
        fns = [f for f, w in ops for _ in range(w)]
        for _ in range(20):
            done = self.rng.choice(fns)()
            if done:
                return done
        return "noop"

    def add_interface(self):
        b, it = self._pick("SessionBean"), self._pick("EjbInterfaceType")
        if not (b and it):
            return None
        u = self._uid("if")
        self.m.create_element("EjbInterface", u, {"name": it.get("name")}, b, "interfaces")
        self.m.add_reference(u, "type", it)
        return f"add_interface {u}"

    def add_session_bean(self):
        m, bt = self._pick("EjbModule"), self._pick("SessionBeanType")
        if not (m and bt):
            return None
        u = self._uid("sb")
        self.m.create_element("SessionBean", u, {"name": u}, m, "beans")
        self.m.add_reference(u, "type", bt)
        return f"add_session_bean {u}"

    def add_reference(self):
        b, rt = self._pick("EnterpriseBean"), self._pick("EjbReferenceType")
        if not (b and rt):
            return None
        u = self._uid("ref")
        self.m.create_element("EjbReference", u, {"name": rt.get("name")}, b, "references")
        self.m.add_reference(u, "type", rt)
        return f"add_reference {u}"

    def add_entry(self):
        b, et = self._pick("EnterpriseBean"), self._pick("SimpleEnvironmentEntryType")
        if not (b and et):
            return None
        u = self._uid("env")
        self.m.create_element("SimpleEnvironmentEntry", u, {"name": et.get("name"), "value": "v0"}, b, "entries")
        self.m.add_reference(u, "type", et)
        return f"add_entry {u}"

    def add_module(self):
        mt = self._pick("EjbModuleType")
        if not mt:
            return None
        u = ModuleFactory().create(self.m, mt.uid, self._uid("mod"))
        return f"add_module {u}"

    def add_module_type(self):
        name = self._uid("T")
        iface = self.rng.choice(("IShipment", "IWarehousing", "IAudit"))
        tpl = ModuleTemplate(name, (BeanTemplate("B", interfaces=(iface,), entries=("mode",),
                                                 references=(("peer", "IWebshop"),)),))
        naming.add_module_type(self.m, tpl)
        return f"add_module_type {name}"

    def delete(self):
        cands = [e for e in self.m.elements() if e.parent is not None]
        if not cands:
            return None
        e = self.rng.choice(sorted(cands, key=lambda x: x.uid))
        self.m.delete_element(e.uid)
        return f"delete {e.uid}"

    def set_state(self):
        m = self._pick("EjbModule")
        if not m:
            return None
        self.m.set_attribute(m, "state", self.rng.choice(("UNDEPLOYED", "DEPLOYED", "STARTED")))
        return f"set_state {m.uid}"

    def set_value(self):
        e = self._pick("SimpleEnvironmentEntry")
        if not e:
            return None
        self.m.set_attribute(e, "value", self.rng.choice(("UPS", "DHL", "FedEx", e.get("value"))))
        return f"set_value {e.uid}"

    def rename(self):
        cands = sorted(self.m.elements(), key=lambda x: x.uid)
        e = self.rng.choice(cands)
        self.m.set_attribute(e, "name", self.rng.choice(("IShipment", "IWarehousing", "n1", e.get("name"))))
        return f"rename {e.uid}"

    def set_exception_type(self):
        te = self._pick("ThrownException")
        if not te:
            return None
        self.m.set_attribute(te, "exception_type", self.rng.choice(EXCEPTIONS))
        return f"set_exception_type {te.uid}"

    def set_ref_interface(self):
        rt = self._pick("EjbReferenceType")
        if not rt:
            return None
        self.m.set_attribute(rt, "interface", self.rng.choice(("IShipment", "IWarehousing", "IAudit")))
        return f"set_ref_interface {rt.uid}"

    def add_connector(self):
        wired = {c.target("reference") for c in self.m.elements_of("EjbConnector")}
        refs = [r for r in self.m.elements_of("EjbReference") if r.uid not in wired]
        ifs = self.m.elements_of("EjbInterface")
        if not (refs and ifs):
            return None
        r, i = self.rng.choice(refs), self.rng.choice(ifs)
        u = self._uid("con")
        self.m.create_element("EjbConnector", u, {"name": u}, naming.CONTAINER_UID, "connectors")
        self.m.add_reference(u, "reference", r)
        self.m.add_reference(u, "interface", i)
        return f"add_connector {u}"

    def add_call(self):
        ifs = self.m.elements_of("EjbInterface")
        if not ifs:
            return None
        inst = self._pick("BeanInstance")
        if inst is None or self.rng.random() < 0.2:
            b = self._pick("EnterpriseBean")
            inst = self.m.create_element("BeanInstance", self._uid("inst"), {"name": "i"}, b, "instances")
        u = self._uid("call")
        self.m.create_element("Call", u, {"name": u}, inst, "calls")
        self.m.add_reference(u, "via", self.rng.choice(ifs))
        if self.rng.random() < 0.8:
            x = self.rng.choice(EXCEPTIONS)
            self.m.create_element("ThrownException", u + ".exc", {"name": x, "exception_type": x}, u, "exceptions")
        return f"add_call {u}"

    def retype_interface(self):
        ei, it = self._pick("EjbInterface"), self._pick("EjbInterfaceType")
        if not (ei and it):
            return None
        old = ei.target("type")
        if old:
            self.m.remove_reference(ei, "type", old)
        self.m.add_reference(ei, "type", it)
        return f"retype_interface {ei.uid}"


# -- near-miss rule texts -----------------------------------------------------

_SPLIT = __import__("re").compile(r'\s+|//[^\n]*|"(?:[^"\\\n]|\\.)*"|->|:=|==|[{}();:,.+]|[^\s{}();:,.+"]+')
_JUNK = ("{", "}", ";", ":", "->", ":=", "==", ".", "+", "(", ")", "rule", "new", "ctx", "agg", "edge",
         "fwd", "bwd", "count", "Bogus", "x", '"s', "42", "@", "\\", "\"\"", "src", "tgt")


def near_miss(text: str, rng: random.Random) -> str:
    """Apply one to three small token-level edits to a valid rule text."""
    toks = [m.group(0) for m in _SPLIT.finditer(text)]
    for _ in range(rng.randint(1, 3)):
        i = rng.randrange(len(toks))
        kind = rng.randrange(5)
        if kind == 0:
            del toks[i]
        elif kind == 1:
            toks.insert(i, rng.choice(_JUNK))
        elif kind == 2:
            toks[i] = rng.choice(_JUNK)
        elif kind == 3 and i + 1 < len(toks):
            toks[i], toks[i + 1] = toks[i + 1], toks[i]
        else:
            toks = toks[:i]
            if not toks:
                toks = ["rule"]
    return "".join(toks)
