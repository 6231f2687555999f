"""The web-shop system used throughout the tests and the self-healing scenario."""

from __future__ import annotations

from .errors import NonEmptyContainer
from .sim import container as C
from .sim.naming import MESSAGE_DRIVEN, BeanTemplate, ModuleTemplate, bean_uid, entry_uid, interface_uid, reference_uid

SHOP_T = ModuleTemplate("ShopT", (
    BeanTemplate("ShopBean", interfaces=("IWebshop",),
                 references=(("shipment", "IShipment"), ("warehouse", "IWarehousing")), pool_size=3),
    BeanTemplate("OrderMailerBean", kind=MESSAGE_DRIVEN, pool_size=1),
))
SHIPMENT_T = ModuleTemplate("ShipmentT", (
    BeanTemplate("ShipmentBean", interfaces=("IShipment",), entries=("provider",), pool_size=3),
))
WAREHOUSE_T = ModuleTemplate("WarehouseT", (
    BeanTemplate("WarehouseBean", interfaces=("IWarehousing",), pool_size=3),
))
WAREHOUSE2_T = ModuleTemplate("Warehouse2T", (
    BeanTemplate("Warehouse2Bean", interfaces=("IWarehousing",), pool_size=3),
))

TEMPLATES = {t.name: t for t in (SHOP_T, SHIPMENT_T, WAREHOUSE_T, WAREHOUSE2_T)}

# frequently used container / source uids
SHOP_BEAN = bean_uid("Shop", "ShopBean")
SHIPMENT_REF = reference_uid(SHOP_BEAN, "shipment")
WAREHOUSE_REF = reference_uid(SHOP_BEAN, "warehouse")
SHIPMENT_IF = interface_uid(bean_uid("Shipment", "ShipmentBean"), "IShipment")
WAREHOUSE_IF = interface_uid(bean_uid("Warehouse", "WarehouseBean"), "IWarehousing")
PROVIDER_ENTRY = entry_uid(bean_uid("Shipment", "ShipmentBean"), "provider")

FIXTURE_SOURCE_ELEMENTS = 39
FIXTURE_TARGET_ELEMENTS = 21


def build_webshop_fixture(container: C.Container) -> None:
    """Install, instantiate, configure, wire and start Shop, Shipment and Warehouse."""
    if not container.empty:
        raise NonEmptyContainer("the web-shop fixture needs an empty container")
    for tpl in (SHOP_T, SHIPMENT_T, WAREHOUSE_T):
        container.install_type(tpl)
    cmds = [C.command(C.INSTANTIATE_MODULE, m, type=t)
            for m, t in (("Shop", "ShopT"), ("Shipment", "ShipmentT"), ("Warehouse", "WarehouseT"))]
    cmds += [C.command(C.DEPLOY, m) for m in ("Shop", "Shipment", "Warehouse")]
    cmds += [C.command(C.WIRE, "c1", reference=SHIPMENT_REF, interface=SHIPMENT_IF),
             C.command(C.WIRE, "c2", reference=WAREHOUSE_REF, interface=WAREHOUSE_IF),
             C.command(C.SET_ENTRY, PROVIDER_ENTRY, value="UPS")]
    cmds += [C.command(C.START, m) for m in ("Shipment", "Warehouse", "Shop")]
    container.execute(cmds)
