import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rtmodels.dsl import builtin_rule_text, check_rules, load_builtin_rules, parse_rules, print_rule, print_rules
from rtmodels.errors import MalformedRule, RuleParseError
from rtmodels.metamodels import build_source_metamodel, build_target_metamodel
from rtmodels.rules import validate_rule_set

from support import near_miss

RULE_NAMES = [
    "ContainerToPlatform", "ModuleTypeToComponentType", "EntryTypeToPropertyType",
    "ReferenceTypeToRequiredInterfaceType", "InterfaceTypeToProvidedInterfaceType", "ModuleToComponent",
    "EntryToProperty", "ReferenceToRequiredInterface", "InterfaceToProvidedInterface",
    "ConnectorToConnector", "ExceptionToFailure",
]


def parse(text, smm, tmm):
    return parse_rules(text, smm, tmm)


def test_builtin_file_has_eleven_rules_in_order():
    doc = load_builtin_rules()
    assert [r.name for r in doc.rules] == RULE_NAMES


def test_print_parse_is_stable(smm, tmm):
    doc = load_builtin_rules()
    once = print_rules(doc)
    again = parse(once, smm, tmm)
    assert again.rules == doc.rules
    assert print_rules(again) == once


def test_interface_rule_shape():
    r = load_builtin_rules().rule("InterfaceToProvidedInterface")
    src_new = [n.type_name for n in r.creates_in("source")]
    tgt_new = [n.type_name for n in r.creates_in("target")]
    assert src_new == ["EjbInterface"] and tgt_new == ["Interface"]
    assert r.creatable("fwd") and not r.creatable("bwd")


def test_failure_rule_aggregates():
    r = load_builtin_rules().rule("ExceptionToFailure")
    assert [n.mode for n in r.nodes_in("target") if n.type_name == "Failure"] == ["agg"]
    assert "count(te)" in print_rule(r)


MINIMAL = """
rule A {
  source { new ec:EjbContainer ; }
  corr { new k:CorrA (src: ec ; tgt: cp) ; }
  target { new cp:ComponentPlatform ; }
  attr { fwd cp.uid := "cp:" + ec.uid ; fwd cp.name := ec.name ; }
}
"""


def test_minimal_rule(smm, tmm):
    doc = parse(MINIMAL, smm, tmm)
    assert len(doc) == 1 and doc.rule("A").new_corr.corr_type == "CorrA"


@pytest.mark.parametrize("text, code", [
    (MINIMAL.replace("EjbContainer", "Nope"), "UnknownNodeType"),
    (MINIMAL.replace("ec.name", "ec.colour"), "UnknownAttribute"),
    (MINIMAL.replace("ec.name ;", "zz.name ;"), "UnknownVariable"),
    (MINIMAL + MINIMAL, "DuplicateRule"),
])
def test_checker_diagnostics(smm, tmm, text, code):
    doc, diags = check_rules(text, smm, tmm)
    assert doc is None
    assert code in {d.code for d in diags}
    assert all(d.line >= 1 and d.column >= 1 for d in diags)


def test_syntax_error_position(smm, tmm):
    text = "rule A {\n  source { new ec EjbContainer ; }\n}"
    doc, diags = check_rules(text, smm, tmm)
    assert doc is None and len(diags) == 1
    d = diags[0]
    assert (d.line, d.column) == (2, 19)
    assert d.severity == "error"
    with pytest.raises(RuleParseError):
        parse(text, smm, tmm)


def test_empty_file_has_no_rules(smm, tmm):
    doc, diags = check_rules("// nothing\n", smm, tmm)
    assert diags == [] and len(doc) == 0
    assert print_rules(doc) == ""


def test_rule_set_rejects_duplicate_corr_types():
    rules = load_builtin_rules().rules
    with pytest.raises(MalformedRule):
        validate_rule_set(rules + rules[:1])


def test_string_escapes_round_trip(smm, tmm):
    text = MINIMAL.replace('"cp:"', r'"c\"p\\:"')
    doc = parse(text, smm, tmm)
    assert parse(print_rules(doc), smm, tmm).rules == doc.rules


def test_fuzzed_near_misses_never_crash(smm, tmm):
    base = builtin_rule_text()
    rng = random.Random(11)
    for _ in range(300):
        text = near_miss(base, rng)
        doc, diags = check_rules(text, smm, tmm)
        if doc is None:
            assert diags
            lines = text.count("\n") + 1
            assert all(1 <= d.line <= lines and d.column >= 1 for d in diags)
        else:
            assert print_rules(parse(print_rules(doc), smm, tmm)) == print_rules(doc)


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet=st.sampled_from(list("rule{}();:.+-=>\" \nabcAB01_/")), max_size=80))
def test_arbitrary_text_yields_document_or_positioned_diagnostics(text):
    doc, diags = check_rules(text, build_source_metamodel(), build_target_metamodel())
    assert (doc is None) == bool(diags)
    for d in diags:
        assert d.line >= 1 and d.column >= 1 and d.message
