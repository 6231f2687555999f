import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rtmodels import guard
from rtmodels.errors import (
    AbstractTypeInstantiation,
    AttributeKindMismatch,
    ContainmentError,
    DirectAccessViolation,
    DuplicateUid,
    MetamodelError,
    ModelError,
    UnknownAttribute,
    UnknownReference,
    UnknownUid,
)
from rtmodels.kernel import (
    INTEGER,
    AttributeSpec,
    ChangeKind,
    Metamodel,
    Model,
    NodeType,
    ReferenceSpec,
    apply_notification,
    canonical,
    dumps,
    from_dict,
    loads,
    to_dict,
)


@pytest.fixture
def mm():
    return Metamodel("toy", [
        NodeType("Node", [AttributeSpec("name")], abstract=True),
        NodeType("Box", [AttributeSpec("size", INTEGER)], [
            ReferenceSpec("items", "Node", containment=True),
            ReferenceSpec("peer", "Node", upper=1),
        ], supertype="Node"),
        NodeType("Leaf", [], supertype="Node"),
    ])


def test_metamodel_rejects_unknown_supertype_and_target():
    with pytest.raises(MetamodelError):
        Metamodel("bad", [NodeType("A", supertype="Missing")])
    with pytest.raises(MetamodelError):
        Metamodel("bad", [NodeType("A", references=[ReferenceSpec("r", "Nope")])])


def test_create_and_inherit_attributes(mm):
    m = Model(mm, "m")
    b = m.create_element("Box", "b1", {"name": "x", "size": 3})
    assert b.get("name") == "x" and b.get("size") == 3
    leaf = m.create_element("Leaf", "l1", {}, "b1", "items")
    assert leaf.get("name") == ""
    assert m.children("b1", "items") == [leaf]
    assert m.parent_of("l1") is b
    assert b.is_a("Node") and not b.is_a("Leaf")


@pytest.mark.parametrize("call, err", [
    (lambda m: m.create_element("Node", "n"), AbstractTypeInstantiation),
    (lambda m: m.create_element("Box", "b1"), DuplicateUid),
    (lambda m: m.create_element("Box", "b2", {"size": "big"}), AttributeKindMismatch),
    (lambda m: m.create_element("Box", "b2", {"colour": 1}), UnknownAttribute),
    (lambda m: m.create_element("Leaf", "l", {}, "b1", "peer"), ContainmentError),
    (lambda m: m.create_element("Leaf", "l", {}, "b1"), ContainmentError),
    (lambda m: m.get("ghost"), UnknownUid),
    (lambda m: m.set_attribute("b1", "uid", "z"), ModelError),
    (lambda m: m.add_reference("b1", "items", "b1"), ContainmentError),
    (lambda m: m.add_reference("b1", "nope", "b1"), UnknownReference),
])
def test_write_errors(mm, call, err):
    m = Model(mm, "m")
    m.create_element("Box", "b1")
    with pytest.raises(err):
        call(m)


def test_notifications_in_order_with_sequence_numbers(mm):
    m = Model(mm, "m")
    q = m.subscribe()
    m.create_element("Box", "b1")
    m.create_element("Leaf", "l1", {}, "b1", "items")
    m.set_attribute("b1", "size", 4)
    m.add_reference("b1", "peer", "l1")
    notes = q.drain()
    assert [n.kind for n in notes] == [ChangeKind.ELEMENT_CREATED, ChangeKind.ELEMENT_CREATED,
                                       ChangeKind.ATTRIBUTE_SET, ChangeKind.REFERENCE_ADDED]
    seqs = [n.sequence_no for n in notes]
    assert seqs == sorted(seqs) and len(set(seqs)) == 4
    assert notes[2].old_value == 0 and notes[2].new_value == 4
    assert not q


def test_delete_clears_incoming_references_then_children_first(mm):
    m = Model(mm, "m")
    m.create_element("Box", "b1")
    m.create_element("Box", "b2", {}, "b1", "items")
    m.create_element("Leaf", "l1", {}, "b2", "items")
    m.create_element("Box", "out")
    m.add_reference("out", "peer", "l1")
    notes = m.delete_element("b2")
    kinds = [(n.kind, n.subject_uid) for n in notes]
    assert kinds == [(ChangeKind.REFERENCE_REMOVED, "out"),
                     (ChangeKind.ELEMENT_DELETED, "l1"),
                     (ChangeKind.ELEMENT_DELETED, "b2")]
    assert m.get("out").refs["peer"] == []
    assert "l1" not in m and m.children("b1", "items") == []


def test_muted_queue_and_peek(mm):
    m = Model(mm, "m")
    q = m.subscribe()
    with q.muted():
        m.create_element("Box", "b1")
    m.create_element("Box", "b2")
    assert len(q.peek()) == 1 and len(q) == 1
    assert q.clear() == 1 and not q


def test_guarded_model_refuses_manager_zone(mm):
    m = Model(mm, "m", guarded=True)
    m.create_element("Box", "b1")
    with guard.manager_zone():
        with pytest.raises(DirectAccessViolation):
            m.get("b1")
        with guard.platform_zone():
            assert m.get("b1").uid == "b1"


def test_serialization_round_trip(mm):
    m = Model(mm, "m")
    m.create_element("Box", "b1", {"name": "a", "size": 2})
    m.create_element("Leaf", "l1", {"name": "q\"uote"}, "b1", "items")
    m.add_reference("b1", "peer", "l1")
    text = dumps(m, ordered=True)
    again = loads(text, mm)
    assert canonical(again) == canonical(m)
    assert dumps(again, ordered=True) == text
    with pytest.raises(ModelError):
        from_dict(json.loads(text), Metamodel("other", []))


def test_replay_notifications_reproduces_model(mm):
    m = Model(mm, "m")
    q = m.subscribe()
    m.create_element("Box", "b1")
    m.create_element("Leaf", "l1", {}, "b1", "items")
    m.add_reference("b1", "peer", "l1")
    m.set_attribute("l1", "name", "n")
    m.remove_reference("b1", "peer", "l1")
    m.create_element("Box", "b2")
    m.delete_element("b2")
    replica = Model(mm, "r")
    for n in q.drain():
        apply_notification(replica, n)
    assert canonical(replica) == canonical(m)


def test_copy_is_independent(mm):
    m = Model(mm, "m")
    m.create_element("Box", "b1")
    c = m.copy()
    c.set_attribute("b1", "size", 9)
    assert m.get("b1").get("size") == 0
    assert to_dict(c)["elements"][0]["attrs"]["size"] == 9


# random edit scripts replayed through notifications always reproduce the model
ops = st.lists(st.tuples(st.sampled_from(["box", "leaf", "del", "set", "peer"]), st.integers(0, 20)),
               max_size=40)


@settings(max_examples=60, deadline=None)
@given(ops)
def test_replay_property(script):
    mm = Metamodel("toy", [
        NodeType("Box", [AttributeSpec("size", INTEGER)], [
            ReferenceSpec("items", "Box", containment=True),
            ReferenceSpec("peer", "Box"),
        ]),
    ])
    m = Model(mm, "m")
    q = m.subscribe()
    for op, k in script:
        uids = sorted(m.uids())
        pick = uids[k % len(uids)] if uids else None
        if op == "box" or pick is None:
            m.create_element("Box")
        elif op == "leaf":
            m.create_element("Box", None, {}, pick, "items")
        elif op == "del":
            m.delete_element(pick)
        elif op == "set":
            m.set_attribute(pick, "size", k)
        elif op == "peer" and uids[0] not in m.get(pick).refs["peer"]:
            m.add_reference(pick, "peer", uids[0])
    replica = Model(mm, "r")
    for n in q.drain():
        apply_notification(replica, n)
    assert canonical(replica) == canonical(m)
