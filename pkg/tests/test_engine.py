import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rtmodels import guard
from rtmodels.engine import CorrespondenceLink, CorrespondenceModel, SyncEngine
from rtmodels.errors import (
    EngineStateError,
    InterleavedChanges,
    MalformedRule,
    RuleConflict,
    UnsynchronizableChange,
)
from rtmodels.kernel import canonical
from rtmodels.manager import make_world
from rtmodels.webshop import PROVIDER_ENTRY, SHOP_BEAN, WAREHOUSE_IF

from support import RULES, SourceEditor, same_as_batch, target_model

SHOP_IF_TYPE = "ShopT.ShopBean.if.IWebshop"


@pytest.fixture(autouse=True)
def _platform():
    with guard.platform_zone():
        yield


def test_batch_counts(world):
    t = world.target
    assert len(t) == 21
    assert len(world.engine.corr) == 21
    assert t.count("Failure") == 0
    assert {c.get("state") for c in t.elements_of("Component")} == {"STARTED"}
    assert {c.get("name") for c in t.elements_of("Component")} == {"Shop", "Shipment", "Warehouse"}


def test_uid_scheme(world):
    t = world.target
    assert "c:Shop" in t and "ct:ShopT" in t and "cp:container" in t
    assert f"pi:{WAREHOUSE_IF}" in t
    assert t.get(f"prop:{PROVIDER_ENTRY}").get("value") == "UPS"
    assert t.get("c1").target("required") == f"ri:{SHOP_BEAN}.ref.shipment"


def test_new_interface_creates_one_provided_interface(world):
    before = canonical(world.target)
    links = len(world.engine.corr)
    s = world.source
    s.create_element("EjbInterface", "Shop.ShopBean.if.IExtra", {"name": "IExtra"}, SHOP_BEAN, "interfaces")
    s.add_reference("Shop.ShopBean.if.IExtra", "type", SHOP_IF_TYPE)
    rep = world.engine.synchronize("forward")
    after = canonical(world.target)
    assert set(after) - set(before) == {"pi:Shop.ShopBean.if.IExtra"}
    new = world.target.get("pi:Shop.ShopBean.if.IExtra")
    assert (new.parent, new.slot, new.get("name")) == ("c:Shop", "provided", "IExtra")
    assert len(world.engine.corr) == links + 1
    assert rep.created == ["pi:Shop.ShopBean.if.IExtra"]


def test_bare_session_bean_changes_nothing(world):
    before = canonical(world.target)
    world.source.create_element("SessionBean", "Shop.Extra", {"name": "Extra"}, "Shop", "beans")
    rep = world.engine.synchronize("forward")
    assert rep.empty and canonical(world.target) == before


def test_delete_source_element_retires_image(world):
    world.source.delete_element("c2")
    rep = world.engine.synchronize("forward")
    assert "c2" not in world.target and rep.deleted == ["c2"]
    assert same_as_batch(world.engine)[0]


def test_attribute_change_propagates(world):
    world.source.set_attribute("Warehouse", "state", "DEPLOYED")
    world.engine.synchronize("forward")
    assert world.target.get("c:Warehouse").get("state") == "DEPLOYED"


def test_backward_property_write(world):
    world.target.set_attribute(f"prop:{PROVIDER_ENTRY}", "value", "DHL")
    rep = world.engine.synchronize("backward")
    assert world.source.get(PROVIDER_ENTRY).get("value") == "DHL"
    assert rep.direction == "backward"
    assert world.engine.synchronize("forward").empty


def test_backward_connector_creation(world):
    t = world.target
    t.delete_element("c2")
    world.engine.synchronize("backward")
    assert "c2" not in world.source
    t.create_element("Connector", "c9", {"name": "c9"}, "cp:container", "connectors")
    t.add_reference("c9", "required", f"ri:{SHOP_BEAN}.ref.warehouse")
    t.add_reference("c9", "provided", f"pi:{WAREHOUSE_IF}")
    world.engine.synchronize("backward")
    con = world.source.get("c9")
    assert con.target("reference") == f"{SHOP_BEAN}.ref.warehouse"
    assert con.target("interface") == WAREHOUSE_IF


def test_backward_unsynchronizable_creation_keeps_queue(world):
    t = world.target
    t.create_element("Component", "rogue", {"name": "rogue"}, "cp:container", "components")
    with pytest.raises(UnsynchronizableChange):
        world.engine.synchronize("backward")
    assert world.engine.pending()["target"] == 1


def test_interleaved_changes_refused(world):
    world.source.set_attribute("Shop", "name", "Shop")
    world.target.set_attribute("c:Shop", "state", "DEPLOYED")
    with pytest.raises(InterleavedChanges):
        world.engine.synchronize("forward")
    assert isinstance(InterleavedChanges("x"), EngineStateError)


def test_batch_needs_empty_destination(world):
    with pytest.raises(EngineStateError):
        world.engine.transform_batch("forward")


def test_register_rules_refused_while_pending(world):
    world.source.set_attribute("Shop", "name", "S")
    with pytest.raises(EngineStateError):
        world.engine.register_rules(RULES)


def test_unknown_direction(world):
    with pytest.raises(ValueError):
        world.engine.synchronize("sideways")


def test_failure_aggregation_incremental(world):
    c = world.container
    for _ in range(2):
        c.inject_call("Warehouse", "IWarehousing", "LookupFailure")
    c.inject_call("Warehouse", "IWarehousing", "TimeoutException")
    c.inject_call("Warehouse", "IWarehousing")
    world.adapter.pump_events()
    world.engine.synchronize("forward")
    fails = {f.get("exception_type"): f.get("count") for f in world.target.elements_of("Failure")}
    assert fails == {"LookupFailure": 2, "TimeoutException": 1}
    assert all(f.parent == f"pi:{WAREHOUSE_IF}" for f in world.target.elements_of("Failure"))
    c.inject_call("Warehouse", "IWarehousing", "LookupFailure")
    world.adapter.pump_events()
    world.engine.synchronize("forward")
    assert world.target.get(f"f:pi:{WAREHOUSE_IF}/LookupFailure").get("count") == 3
    assert same_as_batch(world.engine)[0]


def test_exception_type_change_moves_count(world):
    c = world.container
    for _ in range(3):
        c.inject_call("Warehouse", "IWarehousing", "LookupFailure")
    world.adapter.pump_events()
    world.engine.synchronize("forward")
    exc = world.source.elements_of("ThrownException")[0]
    world.source.set_attribute(exc, "exception_type", "IOError")
    world.engine.synchronize("forward")
    fails = {f.get("exception_type"): f.get("count") for f in world.target.elements_of("Failure")}
    assert fails == {"LookupFailure": 2, "IOError": 1}
    assert same_as_batch(world.engine)[0]


def test_rule_conflict_on_existing_uid(world):
    world.target.create_element("ComponentType", "ct:NewT", {"name": "clash"}, "cp:container", "componentTypes")
    world.engine.pending_target.clear()
    world.source.create_element("EjbModuleType", "NewT", {"name": "NewT"}, "container", "moduleTypes")
    with pytest.raises(RuleConflict):
        world.engine.synchronize("forward")


def test_register_rules_rejects_unknown_types():
    from dataclasses import replace
    w = make_world(seed=0)
    bad = RULES[0]
    nodes = tuple(replace(n, type_name="Nope") if n.domain == "target" else n for n in bad.nodes)
    with pytest.raises(MalformedRule):
        w.engine.register_rules([replace(bad, nodes=nodes)] + RULES[1:])


def test_correspondence_model_indexes():
    cm = CorrespondenceModel()
    link = CorrespondenceLink("CorrX", "R", ("a",), ("A",), {"x": "a", "y": "A"})
    cm.add(link, created=[("target", "A")])
    assert cm.links_binding("a") == {link.key} and cm.claims("target", "A") == {link.key}
    with pytest.raises(RuleConflict):
        cm.add(link)
    cm.remove(link.key)
    assert len(cm) == 0 and cm.links_binding("a") == set()


def test_close_unsubscribes(world):
    world.engine.close()
    world.source.set_attribute("Shop", "name", "Other")
    assert world.engine.pending() == {"source": 0, "target": 0}


def _incremental_equals_batch(seed: int, edits: int, sync_prob: float):
    w = make_world(seed=seed)
    rng = random.Random(seed)
    ed = SourceEditor(w.source, rng)
    with guard.platform_zone():
        for _ in range(edits):
            ed.edit()
            if rng.random() < sync_prob:
                w.engine.synchronize("forward")
        w.engine.synchronize("forward")
        return same_as_batch(w.engine)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 30), st.floats(0, 1))
def test_incremental_equals_batch(seed, edits, sync_prob):
    ok, why = _incremental_equals_batch(seed, edits, sync_prob)
    assert ok, why


def test_empty_model_batch_then_incremental_container():
    w = make_world(seed=0, fixture=False)
    assert len(w.target) == 1 and w.target.count("ComponentPlatform") == 1
    tgt = target_model()
    eng = SyncEngine(w.source.copy(), tgt, RULES)
    eng.transform_batch("fwd")
    assert canonical(tgt) == canonical(w.target)
