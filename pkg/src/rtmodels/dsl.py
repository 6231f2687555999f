"""Textual triple-rule language: tokenizer, recursive-descent parser, checker and printer.

Grammar (one clause per ``;``)::

    file    := rule*
    rule    := 'rule' NAME '{' section* '}'
    section := ('source' | 'target') '{' (node | edge)* '}'
             | 'corr' '{' corr* '}'
             | 'attr' '{' deriv* '}'
             | 'where' '{' cond* '}'
    node    := ('ctx' | 'new' | 'agg') VAR ':' TYPE ';'
    edge    := 'edge' VAR '.' REF '->' VAR ';'
    corr    := ('ctx' | 'new') VAR ':' TYPE '(' 'src' ':' vars ';' 'tgt' ':' vars ')' ';'
    deriv   := ('fwd' | 'bwd') VAR '.' ATTR ':=' expr ';'
    cond    := VAR '.' ATTR '==' term ';'
    expr    := term ('+' term)*
    term    := STRING | INT | 'true' | 'false' | VAR '.' ATTR | 'count' '(' VAR ')'

``//`` starts a comment running to the end of the line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

from .errors import RuleParseError
from .kernel import Metamodel
from .rules import (
    AGG,
    BWD,
    CTX,
    FWD,
    NEW,
    SOURCE,
    TARGET,
    AttrRef,
    Concat,
    Constraint,
    CorrNode,
    Count,
    Derivation,
    Lit,
    PatternEdge,
    PatternNode,
    TripleRule,
)

BUILTIN_RULE_FILE = "ejb2comp.tgg"


@dataclass(frozen=True)
class Diagnostic:
    severity: str
    code: str
    message: str
    line: int
    column: int

    def __str__(self):
        return f"{self.line}:{self.column}: {self.severity} {self.code}: {self.message}"


@dataclass
class RuleDocument:
    rules: list = field(default_factory=list)
    spans: dict = field(default_factory=dict, compare=False, repr=False)

    def __len__(self):
        return len(self.rules)

    def rule(self, name: str) -> TripleRule:
        for r in self.rules:
            if r.name == name:
                return r
        raise KeyError(name)


# -- tokens -------------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<int>-?[0-9]+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>->|:=|==|[{}();:,.+])
""", re.VERBOSE)

_ESCAPES = {"n": "\n", "t": "\t", '"': '"', "\\": "\\"}


@dataclass(frozen=True)
class Token:
    kind: str  # ident, string, int, op, eof
    text: str
    line: int
    column: int


class _Fail(Exception):
    def __init__(self, diag: Diagnostic):
        self.diag = diag


class _Positions:
    def __init__(self, text: str):
        self.text = text
        self.starts = [0] + [m.end() for m in re.finditer("\n", text)]

    def at(self, offset: int) -> tuple[int, int]:
        lo, hi = 0, len(self.starts) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self.starts[mid] <= offset:
                lo = mid
            else:
                hi = mid - 1
        return lo + 1, offset - self.starts[lo] + 1

    def end(self) -> tuple[int, int]:
        # last non-blank character, so the position stays inside the text
        stripped = self.text.rstrip()
        if not stripped:
            return 1, 1
        return self.at(len(stripped) - 1)


def tokenize(text: str) -> list[Token]:
    pos = _Positions(text)
    out: list[Token] = []
    i = 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if m is None:
            line, col = pos.at(i)
            if text[i] == '"':
                raise _Fail(Diagnostic("error", "SyntaxError", "unterminated string literal", line, col))
            raise _Fail(Diagnostic("error", "SyntaxError", f"unexpected character {text[i]!r}", line, col))
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            line, col = pos.at(i)
            out.append(Token(kind, m.group(), line, col))
        i = m.end()
    line, col = pos.end()
    out.append(Token("eof", "", line, col))
    return out


def _unquote(s: str) -> str:
    body = s[1:-1]
    return re.sub(r"\\(.)", lambda m: _ESCAPES.get(m.group(1), m.group(1)), body)


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t") + '"'


# -- parser -------------------------------------------------------------------

@dataclass
class _RawRule:
    name: str
    tok: Token
    nodes: list = field(default_factory=list)        # (PatternNode, Token)
    edges: list = field(default_factory=list)        # (section, src, ref, dst, Token)
    corr: list = field(default_factory=list)         # (CorrNode, Token)
    derivs: list = field(default_factory=list)       # (Derivation, Token)
    conds: list = field(default_factory=list)        # (Constraint, Token)
    sections: set = field(default_factory=set)


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.i = 0

    @property
    def cur(self) -> Token:
        return self.toks[self.i]

    def _fail(self, msg: str, tok: Optional[Token] = None):
        tok = tok or self.cur
        got = "end of input" if tok.kind == "eof" else repr(tok.text)
        raise _Fail(Diagnostic("error", "SyntaxError", f"{msg}, got {got}", tok.line, tok.column))

    def next(self) -> Token:
        t = self.cur
        if t.kind != "eof":
            self.i += 1
        return t

    def expect_op(self, op: str) -> Token:
        if self.cur.kind == "op" and self.cur.text == op:
            return self.next()
        self._fail(f"expected {op!r}")

    def expect_ident(self, what: str = "identifier", *choices: str) -> Token:
        t = self.cur
        if t.kind == "ident" and (not choices or t.text in choices):
            return self.next()
        self._fail(f"expected {' or '.join(repr(c) for c in choices) if choices else what}")

    def at_op(self, op: str) -> bool:
        return self.cur.kind == "op" and self.cur.text == op

    def parse_file(self) -> list[_RawRule]:
        rules = []
        while self.cur.kind != "eof":
            rules.append(self.parse_rule())
        return rules

    def parse_rule(self) -> _RawRule:
        self.expect_ident("'rule'", "rule")
        name = self.expect_ident("rule name")
        raw = _RawRule(name.text, name)
        self.expect_op("{")
        while not self.at_op("}"):
            sec = self.expect_ident("section", "source", "corr", "target", "attr", "where")
            if sec.text in raw.sections:
                raise _Fail(Diagnostic("error", "SyntaxError", f"section {sec.text!r} given twice",
                                       sec.line, sec.column))
            raw.sections.add(sec.text)
            self.expect_op("{")
            while not self.at_op("}"):
                if sec.text in ("source", "target"):
                    self.parse_pattern_item(raw, sec.text)
                elif sec.text == "corr":
                    self.parse_corr(raw)
                elif sec.text == "attr":
                    self.parse_deriv(raw)
                else:
                    self.parse_cond(raw)
            self.expect_op("}")
        self.expect_op("}")
        return raw

    def parse_pattern_item(self, raw: _RawRule, domain: str):
        head = self.expect_ident("node or edge", CTX, NEW, AGG, "edge")
        if head.text == "edge":
            src = self.expect_ident("variable")
            self.expect_op(".")
            ref = self.expect_ident("reference name")
            self.expect_op("->")
            dst = self.expect_ident("variable")
            self.expect_op(";")
            raw.edges.append((domain, src, ref, dst, head))
            return
        var = self.expect_ident("variable")
        self.expect_op(":")
        typ = self.expect_ident("type name")
        self.expect_op(";")
        raw.nodes.append((PatternNode(domain, var.text, typ.text, head.text), var, typ))

    def _var_list(self) -> list[Token]:
        out = []
        if self.cur.kind == "ident":
            out.append(self.next())
            while self.at_op(","):
                self.next()
                out.append(self.expect_ident("variable"))
        return out

    def parse_corr(self, raw: _RawRule):
        mode = self.expect_ident("'ctx' or 'new'", CTX, NEW)
        var = self.expect_ident("variable")
        self.expect_op(":")
        typ = self.expect_ident("correspondence type")
        self.expect_op("(")
        self.expect_ident("'src'", "src")
        self.expect_op(":")
        srcs = self._var_list()
        self.expect_op(";")
        self.expect_ident("'tgt'", "tgt")
        self.expect_op(":")
        tgts = self._var_list()
        self.expect_op(")")
        self.expect_op(";")
        node = CorrNode(var.text, typ.text, mode.text, tuple(t.text for t in srcs), tuple(t.text for t in tgts))
        raw.corr.append((node, var, srcs, tgts))

    def parse_term(self):
        t = self.cur
        if t.kind == "string":
            self.next()
            return Lit(_unquote(t.text)), t
        if t.kind == "int":
            self.next()
            return Lit(int(t.text)), t
        if t.kind == "ident" and t.text in ("true", "false"):
            self.next()
            return Lit(t.text == "true"), t
        if t.kind == "ident" and t.text == "count" and self.toks[self.i + 1].text == "(":
            self.next()
            self.expect_op("(")
            var = self.expect_ident("variable")
            self.expect_op(")")
            return Count(var.text), var
        if t.kind == "ident":
            self.next()
            self.expect_op(".")
            attr = self.expect_ident("attribute name")
            return AttrRef(t.text, attr.text), t
        self._fail("expected a literal, 'count(...)' or var.attr")

    def parse_expr(self):
        parts = [self.parse_term()]
        while self.at_op("+"):
            self.next()
            parts.append(self.parse_term())
        if len(parts) == 1:
            return parts[0][0], [parts[0]]
        return Concat(tuple(p[0] for p in parts)), parts

    def parse_deriv(self, raw: _RawRule):
        d = self.expect_ident("'fwd' or 'bwd'", FWD, BWD)
        var = self.expect_ident("variable")
        self.expect_op(".")
        attr = self.expect_ident("attribute name")
        self.expect_op(":=")
        expr, parts = self.parse_expr()
        self.expect_op(";")
        raw.derivs.append((Derivation(d.text, var.text, attr.text, expr), var, attr, parts))

    def parse_cond(self, raw: _RawRule):
        var = self.expect_ident("variable")
        self.expect_op(".")
        attr = self.expect_ident("attribute name")
        self.expect_op("==")
        rhs, tok = self.parse_term()
        if isinstance(rhs, Count):
            raise _Fail(Diagnostic("error", "SyntaxError", "count(...) is not allowed in where clauses",
                                   tok.line, tok.column))
        self.expect_op(";")
        raw.conds.append((Constraint(var.text, attr.text, rhs), var, attr, [(rhs, tok)]))


# -- semantic checks ----------------------------------------------------------

class _Checker:
    def __init__(self, source_mm: Metamodel, target_mm: Metamodel):
        self.mms = {SOURCE: source_mm, TARGET: target_mm}
        self.diags: list[Diagnostic] = []

    def err(self, code: str, msg: str, tok: Token):
        self.diags.append(Diagnostic("error", code, msg, tok.line, tok.column))

    def check(self, raws: list[_RawRule]) -> tuple[list[TripleRule], dict]:
        rules, spans, names = [], {}, set()
        for raw in raws:
            if raw.name in names:
                self.err("DuplicateRule", f"rule {raw.name!r} defined twice", raw.tok)
            names.add(raw.name)
            before = len(self.diags)
            rule = self.check_rule(raw, spans)
            if len(self.diags) == before:
                rules.append(rule)
        return rules, spans

    def check_rule(self, raw: _RawRule, spans: dict) -> TripleRule:
        other = {SOURCE: TARGET, TARGET: SOURCE}
        nodes: dict[str, PatternNode] = {}
        corr_vars: set[str] = set()
        spans[(raw.name,)] = (raw.tok.line, raw.tok.column)
        for node, var, typ in raw.nodes:
            if node.var in nodes:
                self.err("DuplicateVariable", f"variable {node.var!r} declared twice", var)
                continue
            nodes[node.var] = node
            spans[(raw.name, node.var)] = (var.line, var.column)
            mm = self.mms[node.domain]
            if node.type_name not in mm:
                if node.type_name in self.mms[other[node.domain]]:
                    self.err("DomainMixup", f"{node.type_name} belongs to the {other[node.domain]} "
                             f"metamodel, not the {node.domain} pattern", typ)
                else:
                    self.err("UnknownNodeType", f"unknown node type {node.type_name!r}", typ)
        for node, var, _srcs, _tgts in raw.corr:
            if node.var in nodes or node.var in corr_vars:
                self.err("DuplicateVariable", f"variable {node.var!r} declared twice", var)
            corr_vars.add(node.var)
            spans[(raw.name, node.var)] = (var.line, var.column)
        edges = []
        for domain, src, ref, dst, head in raw.edges:
            ok = True
            for t in (src, dst):
                n = nodes.get(t.text)
                if n is None:
                    self.err("UnknownVariable", f"edge uses undeclared variable {t.text!r}", t)
                    ok = False
                elif n.domain != domain:
                    self.err("DomainMixup", f"{t.text} is a {n.domain} node used in the {domain} pattern", t)
                    ok = False
            if not ok:
                continue
            s, d = nodes[src.text], nodes[dst.text]
            mm = self.mms[domain]
            if s.type_name not in mm or d.type_name not in mm:
                continue
            refs = mm.type(s.type_name).all_references()
            if ref.text not in refs:
                self.err("UnknownReference", f"{s.type_name} has no reference {ref.text!r}", ref)
                continue
            if not mm.type(d.type_name).conforms_to(refs[ref.text].target):
                self.err("EdgeTypeMismatch", f"{s.type_name}.{ref.text} points to {refs[ref.text].target}, "
                         f"not {d.type_name}", dst)
                continue
            edges.append(PatternEdge(domain, src.text, ref.text, dst.text))
            spans[(raw.name, src.text, ref.text, dst.text)] = (head.line, head.column)
        if not raw.corr:
            self.err("DanglingCorrReference", f"rule {raw.name} has no correspondence nodes", raw.tok)
        for node, _var, srcs, tgts in raw.corr:
            for toks, domain in ((srcs, SOURCE), (tgts, TARGET)):
                for t in toks:
                    n = nodes.get(t.text)
                    if n is None or n.domain != domain:
                        self.err("DanglingCorrReference",
                                 f"{node.var} refers to {t.text!r}, which is not a {domain} node", t)
        for deriv, var, attr, parts in raw.derivs:
            self._check_attr(nodes, var, attr)
            for term, tok in parts:
                self._check_term(nodes, term, tok)
        for cond, var, attr, parts in raw.conds:
            self._check_attr(nodes, var, attr)
            for term, tok in parts:
                self._check_term(nodes, term, tok)
        return TripleRule(
            raw.name,
            tuple(nodes.values()),
            tuple(edges),
            tuple(c[0] for c in raw.corr),
            tuple(d[0] for d in raw.derivs),
            tuple(c[0] for c in raw.conds),
        )

    def _check_attr(self, nodes, var: Token, attr: Token):
        n = nodes.get(var.text)
        if n is None:
            self.err("UnknownVariable", f"undeclared variable {var.text!r}", var)
            return
        mm = self.mms[n.domain]
        if n.type_name not in mm:
            return
        if attr.text != "uid" and attr.text not in mm.type(n.type_name).all_attributes():
            self.err("UnknownAttribute", f"{n.type_name} has no attribute {attr.text!r}", attr)

    def _check_term(self, nodes, term, tok: Token):
        if isinstance(term, AttrRef):
            n = nodes.get(term.var)
            if n is None:
                self.err("UnknownVariable", f"undeclared variable {term.var!r}", tok)
                return
            mm = self.mms[n.domain]
            if n.type_name in mm and term.attr != "uid" and term.attr not in mm.type(n.type_name).all_attributes():
                self.err("UnknownAttribute", f"{n.type_name} has no attribute {term.attr!r}", tok)
        elif isinstance(term, Count):
            if term.var not in nodes:
                self.err("UnknownVariable", f"undeclared variable {term.var!r}", tok)


# -- public API ---------------------------------------------------------------

def check_rules(text: str, source_mm: Metamodel, target_mm: Metamodel) -> tuple[Optional[RuleDocument], list[Diagnostic]]:
    """Parse and check ``text``; never raises on bad input."""
    try:
        raws = _Parser(tokenize(text)).parse_file()
    except _Fail as f:
        return None, [f.diag]
    checker = _Checker(source_mm, target_mm)
    rules, spans = checker.check(raws)
    if checker.diags:
        return None, checker.diags
    return RuleDocument(rules, spans), []


def parse_rules(text: str, source_mm: Metamodel, target_mm: Metamodel) -> RuleDocument:
    doc, diags = check_rules(text, source_mm, target_mm)
    if diags:
        raise RuleParseError(diags)
    return doc


def _print_expr(e) -> str:
    if isinstance(e, Lit):
        if isinstance(e.value, bool):
            return "true" if e.value else "false"
        if isinstance(e.value, int):
            return str(e.value)
        return _quote(e.value)
    if isinstance(e, AttrRef):
        return f"{e.var}.{e.attr}"
    if isinstance(e, Count):
        return f"count({e.var})"
    return " + ".join(_print_expr(p) for p in e.parts)


def print_rule(rule: TripleRule) -> str:
    lines = [f"rule {rule.name} {{"]
    for domain in (SOURCE, TARGET):
        if domain == TARGET:
            lines.append("  corr {")
            for c in rule.corr_nodes:
                lines.append(f"    {c.mode} {c.var}:{c.corr_type} (src: {', '.join(c.sources)} ; "
                             f"tgt: {', '.join(c.targets)}) ;")
            lines.append("  }")
        nodes = rule.nodes_in(domain)
        edges = rule.edges_in(domain)
        if not nodes and not edges:
            continue
        lines.append(f"  {domain} {{")
        lines += [f"    {n.mode} {n.var}:{n.type_name} ;" for n in nodes]
        lines += [f"    edge {e.src}.{e.ref} -> {e.dst} ;" for e in edges]
        lines.append("  }")
    if rule.derivations:
        lines.append("  attr {")
        lines += [f"    {d.direction} {d.var}.{d.attr} := {_print_expr(d.expr)} ;" for d in rule.derivations]
        lines.append("  }")
    if rule.constraints:
        lines.append("  where {")
        lines += [f"    {c.var}.{c.attr} == {_print_expr(c.rhs)} ;" for c in rule.constraints]
        lines.append("  }")
    lines.append("}")
    return "\n".join(lines)


def print_rules(doc: RuleDocument) -> str:
    if not doc.rules:
        return ""
    return "\n\n".join(print_rule(r) for r in doc.rules) + "\n"


def builtin_rule_text() -> str:
    return resources.files("rtmodels").joinpath("rules", BUILTIN_RULE_FILE).read_text(encoding="utf-8")


def load_builtin_rules() -> RuleDocument:
    from .metamodels import build_source_metamodel, build_target_metamodel

    return parse_rules(builtin_rule_text(), build_source_metamodel(), build_target_metamodel())
