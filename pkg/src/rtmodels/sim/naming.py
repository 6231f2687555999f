"""Module-type templates, the container's identifier scheme, and source-model builders.

Container entities and source-model elements share identifiers, so a
template expanded by the container and the same template expanded into the
source model agree on every uid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from ..kernel import Model

CONTAINER_UID = "container"

SESSION = "session"
MESSAGE_DRIVEN = "mdb"


@dataclass(frozen=True)
class BeanTemplate:
    name: str
    kind: str = SESSION
    interfaces: tuple = ()   # provided interface names (session beans only)
    references: tuple = ()   # (reference name, required interface name)
    entries: tuple = ()      # environment entry names
    pool_size: int = 1

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "interfaces": list(self.interfaces),
                "references": [list(r) for r in self.references], "entries": list(self.entries),
                "pool_size": self.pool_size}

    @classmethod
    def from_dict(cls, d: dict) -> "BeanTemplate":
        return cls(d["name"], d.get("kind", SESSION), tuple(d.get("interfaces", ())),
                   tuple(tuple(r) for r in d.get("references", ())), tuple(d.get("entries", ())),
                   int(d.get("pool_size", 1)))


@dataclass(frozen=True)
class ModuleTemplate:
    name: str
    beans: tuple

    def to_dict(self) -> dict:
        return {"name": self.name, "beans": [b.to_dict() for b in self.beans]}

    @classmethod
    def from_dict(cls, d: dict) -> "ModuleTemplate":
        return cls(d["name"], tuple(BeanTemplate.from_dict(b) for b in d["beans"]))

    def provided(self) -> list[str]:
        return [i for b in self.beans for i in b.interfaces]


# -- identifiers --------------------------------------------------------------

def bean_uid(owner: str, bean: str) -> str:
    return f"{owner}.{bean}"


def interface_uid(bean: str, name: str) -> str:
    return f"{bean}.if.{name}"


def reference_uid(bean: str, name: str) -> str:
    return f"{bean}.ref.{name}"


def entry_uid(bean: str, name: str) -> str:
    return f"{bean}.env.{name}"


def instance_uid(bean: str, k: int) -> str:
    return f"{bean}#{k}"


def call_uid(n: int) -> str:
    return f"call-{n}"


def exception_uid(call: str) -> str:
    return f"{call}.exc"


def module_name_for(type_name: str) -> str:
    """Default module name for a module type: ``WarehouseT`` -> ``Warehouse``."""
    return type_name[:-1] if type_name.endswith("T") and len(type_name) > 1 else type_name


# -- source-model builders ----------------------------------------------------

def add_container(model: Model, name: str = "Container"):
    return model.create_element("EjbContainer", CONTAINER_UID, {"name": name})


def add_module_type(model: Model, tpl: ModuleTemplate) -> str:
    mt = model.create_element("EjbModuleType", tpl.name, {"name": tpl.name},
                              CONTAINER_UID, "moduleTypes").uid
    for b in tpl.beans:
        kind = "SessionBeanType" if b.kind == SESSION else "MessageDrivenBeanType"
        bt = model.create_element(kind, bean_uid(mt, b.name), {"name": b.name, "pool_size": b.pool_size},
                                  mt, "beanTypes").uid
        for i in b.interfaces:
            model.create_element("EjbInterfaceType", interface_uid(bt, i), {"name": i}, bt, "interfaceTypes")
        for r, iface in b.references:
            model.create_element("EjbReferenceType", reference_uid(bt, r), {"name": r, "interface": iface},
                                 bt, "referenceTypes")
        for e in b.entries:
            model.create_element("SimpleEnvironmentEntryType", entry_uid(bt, e), {"name": e}, bt, "entryTypes")
    return mt


def add_module(model: Model, module: str, tpl: ModuleTemplate, state: str = "UNDEPLOYED",
               entries: Optional[dict] = None) -> str:
    """Expand ``tpl`` into an EjbModule subtree; ``entries`` maps entry uid to value."""
    entries = entries or {}
    m = model.create_element("EjbModule", module, {"name": module, "state": state},
                             CONTAINER_UID, "modules").uid
    model.add_reference(m, "type", tpl.name)
    for b in tpl.beans:
        kind = "SessionBean" if b.kind == SESSION else "MessageDrivenBean"
        bt = bean_uid(tpl.name, b.name)
        bu = model.create_element(kind, bean_uid(m, b.name), {"name": b.name}, m, "beans").uid
        model.add_reference(bu, "type", bt)
        for i in b.interfaces:
            u = model.create_element("EjbInterface", interface_uid(bu, i), {"name": i}, bu, "interfaces").uid
            model.add_reference(u, "type", interface_uid(bt, i))
        for r, _ in b.references:
            u = model.create_element("EjbReference", reference_uid(bu, r), {"name": r}, bu, "references").uid
            model.add_reference(u, "type", reference_uid(bt, r))
        for e in b.entries:
            eu = entry_uid(bu, e)
            model.create_element("SimpleEnvironmentEntry", eu, {"name": e, "value": entries.get(eu, "")},
                                 bu, "entries")
            model.add_reference(eu, "type", entry_uid(bt, e))
    return m


def add_connector(model: Model, uid: str, reference: str, interface: str) -> str:
    model.create_element("EjbConnector", uid, {"name": uid}, CONTAINER_UID, "connectors")
    model.add_reference(uid, "reference", reference)
    model.add_reference(uid, "interface", interface)
    return uid


def add_instance(model: Model, uid: str, bean: str) -> str:
    return model.create_element("BeanInstance", uid, {"name": uid}, bean, "instances").uid


def add_call(model: Model, uid: str, instance: str, interface: str, exception: Optional[str]) -> str:
    model.create_element("Call", uid, {"name": uid}, instance, "calls")
    model.add_reference(uid, "via", interface)
    if exception:
        model.create_element("ThrownException", exception_uid(uid),
                             {"name": exception, "exception_type": exception}, uid, "exceptions")
    return uid
