"""The EJB-style source metamodel, the component target metamodel, and their constraints."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

from .errors import ForeignMetamodel
from .kernel import (
    ENUM,
    INTEGER,
    TEXT,
    AttributeSpec as A,
    Metamodel,
    Model,
    NodeType,
    ReferenceSpec as R,
)

SOURCE_MM = "ejb"
TARGET_MM = "components"


class LifecycleState(str, Enum):
    UNDEPLOYED = "UNDEPLOYED"
    DEPLOYED = "DEPLOYED"
    STARTED = "STARTED"


LIFECYCLE = tuple(s.value for s in LifecycleState)

_LEGAL = {
    ("UNDEPLOYED", "DEPLOYED"),
    ("DEPLOYED", "UNDEPLOYED"),
    ("DEPLOYED", "STARTED"),
    ("STARTED", "DEPLOYED"),
}


def is_legal_transition(old: str, new: str) -> bool:
    return (old, new) in _LEGAL


_UID_NAME = (A("name"),)


def _source_types():
    return [
        NodeType("EjbContainer", _UID_NAME, [
            R("moduleTypes", "EjbModuleType", containment=True),
            R("modules", "EjbModule", containment=True),
            R("connectors", "EjbConnector", containment=True),
        ]),
        # type layer
        NodeType("EjbModuleType", _UID_NAME, [
            R("beanTypes", "EnterpriseBeanType", containment=True, lower=1),
        ]),
        NodeType("EnterpriseBeanType", _UID_NAME + (A("pool_size", INTEGER),), [
            R("referenceTypes", "EjbReferenceType", containment=True),
            R("entryTypes", "SimpleEnvironmentEntryType", containment=True),
        ], abstract=True),
        NodeType("SessionBeanType", (), [
            R("interfaceTypes", "EjbInterfaceType", containment=True),
        ], supertype="EnterpriseBeanType"),
        NodeType("MessageDrivenBeanType", (), (), supertype="EnterpriseBeanType"),
        NodeType("EjbInterfaceType", _UID_NAME),
        # a reference type names the interface type it needs
        NodeType("EjbReferenceType", _UID_NAME + (A("interface"),)),
        NodeType("SimpleEnvironmentEntryType", _UID_NAME),
        # configuration layer
        NodeType("EjbModule", _UID_NAME + (A("state", ENUM, LIFECYCLE),), [
            R("type", "EjbModuleType", lower=1, upper=1),
            R("beans", "EnterpriseBean", containment=True, lower=1),
        ]),
        NodeType("EnterpriseBean", _UID_NAME, [
            R("type", "EnterpriseBeanType", lower=1, upper=1),
            R("references", "EjbReference", containment=True),
            R("entries", "SimpleEnvironmentEntry", containment=True),
            R("instances", "BeanInstance", containment=True),
        ], abstract=True),
        NodeType("SessionBean", (), [
            R("interfaces", "EjbInterface", containment=True),
        ], supertype="EnterpriseBean"),
        NodeType("MessageDrivenBean", (), (), supertype="EnterpriseBean"),
        NodeType("EjbInterface", _UID_NAME, [R("type", "EjbInterfaceType", lower=1, upper=1)]),
        NodeType("EjbReference", _UID_NAME, [R("type", "EjbReferenceType", lower=1, upper=1)]),
        NodeType("SimpleEnvironmentEntry", _UID_NAME + (A("value"),), [
            R("type", "SimpleEnvironmentEntryType", lower=1, upper=1),
        ]),
        NodeType("EjbConnector", _UID_NAME, [
            R("reference", "EjbReference", lower=1, upper=1),
            R("interface", "EjbInterface", lower=1, upper=1),
        ]),
        # instance layer
        NodeType("BeanInstance", _UID_NAME, [R("calls", "Call", containment=True)]),
        NodeType("Call", _UID_NAME, [
            R("via", "EjbInterface", lower=1, upper=1),
            R("exceptions", "ThrownException", containment=True),
        ]),
        NodeType("ThrownException", _UID_NAME + (A("exception_type"),)),
    ]


def _target_types():
    return [
        NodeType("ComponentPlatform", _UID_NAME, [
            R("componentTypes", "ComponentType", containment=True),
            R("components", "Component", containment=True),
            R("connectors", "Connector", containment=True),
        ]),
        NodeType("ComponentType", _UID_NAME, [
            R("providedInterfaceTypes", "InterfaceType", containment=True),
            R("requiredInterfaceTypes", "InterfaceType", containment=True),
            R("propertyTypes", "PropertyType", containment=True),
        ]),
        NodeType("InterfaceType", _UID_NAME),
        NodeType("PropertyType", _UID_NAME),
        NodeType("Component", _UID_NAME + (A("state", ENUM, LIFECYCLE),), [
            R("type", "ComponentType", lower=1, upper=1),
            R("provided", "Interface", containment=True, lower=1),
            R("required", "Interface", containment=True),
            R("properties", "Property", containment=True),
        ]),
        NodeType("Interface", _UID_NAME, [
            R("type", "InterfaceType", lower=1, upper=1),
            R("failures", "Failure", containment=True),
        ]),
        NodeType("Property", _UID_NAME + (A("value"),), [
            R("type", "PropertyType", lower=1, upper=1),
        ]),
        NodeType("Connector", _UID_NAME, [
            R("required", "Interface", lower=1, upper=1),
            R("provided", "Interface", lower=1, upper=1),
        ]),
        NodeType("Failure", _UID_NAME + (A("exception_type"), A("count", INTEGER))),
    ]


@lru_cache(maxsize=None)
def build_source_metamodel() -> Metamodel:
    return Metamodel(SOURCE_MM, _source_types())


@lru_cache(maxsize=None)
def build_target_metamodel() -> Metamodel:
    return Metamodel(TARGET_MM, _target_types())


# -- well-formedness ----------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    code: str
    uid: str
    message: str = field(default="", compare=False)

    def __str__(self):
        return f"{self.code}({self.uid}): {self.message}"


# slots whose violations are reported under a dedicated code instead of the generic one
_NAMED_SLOTS = {
    ("EjbModule", "beans"): "ModuleWithoutBean",
    ("Component", "provided"): "ComponentWithoutProvidedInterface",
    ("EjbConnector", "reference"): "BadConnectorEndpoints",
    ("EjbConnector", "interface"): "BadConnectorEndpoints",
    ("Connector", "required"): "BadConnectorEndpoints",
    ("Connector", "provided"): "BadConnectorEndpoints",
}


def check_wellformedness(model: Model) -> list[Violation]:
    """Return every constraint violation of ``model``; an empty list means well-formed."""
    name = model.metamodel.name
    if name not in (SOURCE_MM, TARGET_MM):
        raise ForeignMetamodel(f"no constraints known for metamodel {name!r}")
    out: list[Violation] = []
    for e in sorted(model.elements(), key=lambda x: x.uid):
        flagged = set()
        for ref, spec in e.type.all_references().items():
            n = len(e.refs[ref])
            if n >= spec.lower and (spec.upper is None or n <= spec.upper):
                continue
            code = _NAMED_SLOTS.get((_owner(e.type, ref), ref), "CardinalityViolation")
            if code in flagged:
                continue
            flagged.add(code)
            out.append(Violation(code, e.uid, f"{e.type.name}.{ref} has {n}, bounds [{spec.lower}, {spec.upper}]"))
        if e.type.name == "Connector" and "BadConnectorEndpoints" not in flagged:
            req, prov = e.target("required"), e.target("provided")
            if model.get(req).slot != "required" or model.get(prov).slot != "provided":
                out.append(Violation("BadConnectorEndpoints", e.uid,
                                     "connector must join a required and a provided interface"))
        if e.type.name == "Failure" and model.get(e.parent).slot != "provided":
            out.append(Violation("FailureOnRequiredInterface", e.uid,
                                 "failures attach to provided interfaces only"))
        if e.type.name == "EjbConnector" and "BadConnectorEndpoints" not in flagged:
            iface = model.get(e.target("interface"))
            if not model.parent_of(iface.uid).is_a("SessionBean"):
                out.append(Violation("BadConnectorEndpoints", e.uid, "interface not provided by a session bean"))
    return sorted(out, key=lambda v: (v.uid, v.code))


def _owner(t: NodeType, ref: str) -> str:
    for s in t.chain():
        if any(r.name == ref for r in s.references):
            return s.name
    return t.name
