import pytest

from rtmodels.errors import ForeignMetamodel
from rtmodels.kernel import Metamodel, Model
from rtmodels.metamodels import (
    LIFECYCLE,
    build_source_metamodel,
    build_target_metamodel,
    check_wellformedness,
    is_legal_transition,
)
from rtmodels.webshop import FIXTURE_SOURCE_ELEMENTS, FIXTURE_TARGET_ELEMENTS


def codes(model):
    return {(v.code, v.uid) for v in check_wellformedness(model)}


def test_metamodels_are_cached_and_distinct():
    assert build_source_metamodel() is build_source_metamodel()
    assert build_source_metamodel().name != build_target_metamodel().name


def test_source_types_present(smm):
    for name in ("EjbContainer", "EjbModuleType", "SessionBeanType", "MessageDrivenBeanType",
                 "EjbInterfaceType", "EjbReferenceType", "SimpleEnvironmentEntryType", "EjbModule",
                 "SessionBean", "MessageDrivenBean", "EjbInterface", "EjbReference",
                 "SimpleEnvironmentEntry", "EjbConnector", "BeanInstance", "Call", "ThrownException"):
        assert name in smm
    assert smm.type("SessionBean").conforms_to("EnterpriseBean")


def test_target_types_present(tmm):
    for name in ("ComponentPlatform", "ComponentType", "InterfaceType", "PropertyType", "Component",
                 "Interface", "Property", "Connector", "Failure"):
        assert name in tmm


@pytest.mark.parametrize("old, new, ok", [
    ("UNDEPLOYED", "DEPLOYED", True), ("DEPLOYED", "STARTED", True),
    ("STARTED", "DEPLOYED", True), ("DEPLOYED", "UNDEPLOYED", True),
    ("UNDEPLOYED", "STARTED", False), ("STARTED", "UNDEPLOYED", False),
    ("STARTED", "STARTED", False),
])
def test_lifecycle_transitions(old, new, ok):
    assert is_legal_transition(old, new) is ok


def test_lifecycle_literals():
    assert LIFECYCLE == ("UNDEPLOYED", "DEPLOYED", "STARTED")


def test_fixture_models_are_wellformed(world):
    assert check_wellformedness(world.source) == []
    assert check_wellformedness(world.target) == []
    assert len(world.source) == FIXTURE_SOURCE_ELEMENTS
    assert len(world.target) == FIXTURE_TARGET_ELEMENTS


def test_component_without_provided_interface(target):
    target.create_element("ComponentPlatform", "cp")
    target.create_element("ComponentType", "ct", {}, "cp", "componentTypes")
    target.create_element("Component", "c", {}, "cp", "components")
    target.add_reference("c", "type", "ct")
    assert codes(target) == {("ComponentWithoutProvidedInterface", "c")}


def _two_components(t):
    t.create_element("ComponentPlatform", "cp")
    t.create_element("ComponentType", "ct", {}, "cp", "componentTypes")
    t.create_element("InterfaceType", "it", {}, "ct", "providedInterfaceTypes")
    for c in ("a", "b"):
        t.create_element("Component", c, {}, "cp", "components")
        t.add_reference(c, "type", "ct")
        t.create_element("Interface", f"{c}.p", {}, c, "provided")
        t.add_reference(f"{c}.p", "type", "it")
    t.create_element("Interface", "a.r", {}, "a", "required")
    t.add_reference("a.r", "type", "it")


def test_connector_endpoint_roles(target):
    _two_components(target)
    target.create_element("Connector", "k", {}, "cp", "connectors")
    target.add_reference("k", "required", "a.p")  # wrong role
    target.add_reference("k", "provided", "b.p")
    assert codes(target) == {("BadConnectorEndpoints", "k")}


def test_connector_missing_end(target):
    _two_components(target)
    target.create_element("Connector", "k", {}, "cp", "connectors")
    target.add_reference("k", "required", "a.r")
    assert codes(target) == {("BadConnectorEndpoints", "k")}


def test_failure_on_required_interface(target):
    _two_components(target)
    target.create_element("Failure", "f", {"count": 1}, "a.r", "failures")
    assert codes(target) == {("FailureOnRequiredInterface", "f")}


def test_cardinality_violation_upper(target):
    _two_components(target)
    target.create_element("ComponentType", "ct2", {}, "cp", "componentTypes")
    target.add_reference("a", "type", "ct2")
    assert ("CardinalityViolation", "a") in codes(target)


def test_module_without_bean(smm):
    m = Model(smm, "s")
    m.create_element("EjbContainer", "container")
    m.create_element("EjbModuleType", "T", {}, "container", "moduleTypes")
    m.create_element("EjbModule", "M", {}, "container", "modules")
    m.add_reference("M", "type", "T")
    found = codes(m)
    assert ("ModuleWithoutBean", "M") in found


def test_foreign_metamodel():
    with pytest.raises(ForeignMetamodel):
        check_wellformedness(Model(Metamodel("x", []), "x"))
