"""Morphology construction, mutation closure, and serialization."""

import numpy as np
import pytest

from coevo import morphology as M


def random_walk(rng, steps, start=None, node_cap=16, child_cap=3):
    m = start or M.initial_morphology(int(rng.integers(0, 4)))
    for _ in range(steps):
        n = len(m)
        act = M.MorphAction(rng.integers(0, 3, n), rng.uniform(-0.2, 0.2, (n, 5)))
        m, _ = M.apply_morph_action(m, act, node_cap, child_cap)
    return m


class TestInitial:
    def test_head_only(self):
        m = M.initial_morphology(0)
        assert len(m) == 1
        assert m.head().id == 0
        assert m.adjacency().sum() == 0

    def test_two_limbs(self):
        m = M.initial_morphology(2)
        assert len(m) == 3
        assert m.children(0) == (1, 2)
        assert m.adjacency().sum() == 4  # two symmetric edges

    def test_too_many_limbs(self):
        with pytest.raises(M.MorphologyError):
            M.initial_morphology(4)


class TestApply:
    def test_identity_action_is_fixed_point(self):
        m = M.initial_morphology(2)
        out, info = M.apply_morph_action(m, M.MorphAction.identity(len(m)))
        assert out == m
        assert info.action_cost == 0.0

    def test_add_on_head(self):
        m = M.initial_morphology(0)
        act = M.MorphAction(np.array([M.ADD_JOINT]), np.zeros((1, 5)))
        out, info = M.apply_morph_action(m, act)
        assert len(out) == 2 and info.added == 1
        assert out.children(0) == (1,)

    def test_delete_internal_soft_rejected(self):
        # brute force: enumerate every single-node action on a 4-node chain and
        # check outcomes against a validity oracle
        m = M.initial_morphology(1)
        act = M.MorphAction(np.array([M.NO_CHANGE, M.ADD_JOINT]), np.zeros((2, 5)))
        m, _ = M.apply_morph_action(m, act)
        act = M.MorphAction(np.array([M.NO_CHANGE, M.NO_CHANGE, M.ADD_JOINT]), np.zeros((3, 5)))
        m, _ = M.apply_morph_action(m, act)   # chain 0 - 1 - 3 - 4
        assert len(m) == 4
        internal = [n.id for n in m.nodes if n.parent is not None and m.children(n.id)]
        for node_id in internal:
            idx = m.ids().index(node_id)
            topo = np.full(4, M.NO_CHANGE)
            topo[idx] = M.DEL_JOINT
            out, info = M.apply_morph_action(m, M.MorphAction(topo, np.zeros((4, 5))))
            assert out.ids() == m.ids()      # unchanged topology
            assert info.rejected_del == 1
        # deleting the head is likewise rejected
        topo = np.full(4, M.NO_CHANGE)
        topo[0] = M.DEL_JOINT
        out, info = M.apply_morph_action(m, M.MorphAction(topo, np.zeros((4, 5))))
        assert out.ids() == m.ids() and info.rejected_del == 1
        # deleting the leaf works
        leaf = [n.id for n in m.nodes if n.parent is not None and not m.children(n.id)][0]
        topo = np.full(4, M.NO_CHANGE)
        topo[m.ids().index(leaf)] = M.DEL_JOINT
        out, info = M.apply_morph_action(m, M.MorphAction(topo, np.zeros((4, 5))))
        assert len(out) == 3 and info.deleted == 1

    def test_input_not_mutated(self):
        m = M.initial_morphology(2)
        snapshot = M.to_json(m)
        act = M.MorphAction(np.full(3, M.ADD_JOINT), np.full((3, 5), 0.05))
        M.apply_morph_action(m, act)
        assert M.to_json(m) == snapshot

    def test_node_count_changes_by_exactly_one(self):
        rng = np.random.default_rng(7)
        m = M.initial_morphology(2)
        for _ in range(200):
            n = len(m)
            act = M.MorphAction(rng.integers(0, 3, n), rng.uniform(-0.1, 0.1, (n, 5)))
            out, info = M.apply_morph_action(m, act)
            assert len(out) == len(m) + info.added - info.deleted
            m = out

    def test_child_cap_respected(self):
        m = M.initial_morphology(3)
        act = M.MorphAction(np.array([M.ADD_JOINT, M.NO_CHANGE, M.NO_CHANGE, M.NO_CHANGE]),
                            np.zeros((4, 5)))
        out, info = M.apply_morph_action(m, act)
        assert len(out) == 4 and info.rejected_add == 1

    def test_delta_clipping(self):
        m = M.initial_morphology(0)
        act = M.MorphAction(np.array([M.NO_CHANGE]), np.full((1, 5), 10.0))
        out, _ = M.apply_morph_action(m, act, delta_cap=0.1)
        assert np.allclose(out.head().attrs, 0.1)

    def test_shape_mismatch_raises(self):
        m = M.initial_morphology(2)
        with pytest.raises(M.MorphologyError):
            M.apply_morph_action(m, M.MorphAction.identity(5))


class TestValidate:
    def test_initial_ok(self):
        assert M.validate(M.initial_morphology(1)) == []

    def test_attr_out_of_range(self):
        bad = M.Morphology([M.JointNode(0, None, np.array([1.5, 0, 0, 0, 0]))])
        violations = M.validate(bad)
        assert any("out of [-1, 1]" in v for v in violations)

    def test_two_heads(self):
        bad = M.Morphology([M.JointNode(0, None, np.zeros(5)),
                            M.JointNode(1, None, np.zeros(5))])
        assert any("head" in v for v in M.validate(bad))

    def test_orphan_parent(self):
        bad = M.Morphology([M.JointNode(0, None, np.zeros(5)),
                            M.JointNode(1, 99, np.zeros(5))])
        assert any("does not exist" in v for v in M.validate(bad))

    def test_closure_under_random_walks(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            m = random_walk(rng, 1000)
            assert M.validate(m) == []
            assert len(m) <= 16


class TestSerialization:
    def test_roundtrip_simple(self):
        m = M.initial_morphology(2)
        assert M.roundtrip(m) == m

    def test_roundtrip_random_trees(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            m = random_walk(rng, 300)
            back = M.roundtrip(m)
            # structural-equality oracle: same ids, parents, attrs
            assert back.ids() == m.ids()
            for a, b in zip(m.nodes, back.nodes):
                assert a.parent == b.parent
                assert np.array_equal(a.attrs, b.attrs)

    def test_missing_head(self):
        doc = {"schema_version": 1,
               "nodes": [{"id": 0, "parent": 1, "attrs": [0, 0, 0, 0, 0]},
                         {"id": 1, "parent": 0, "attrs": [0, 0, 0, 0, 0]}]}
        with pytest.raises(M.SchemaError, match="head"):
            M.from_dict(doc)

    def test_error_paths_are_reported(self):
        with pytest.raises(M.SchemaError, match=r"\$\.nodes\[0\]\.attrs"):
            M.from_dict({"schema_version": 1,
                         "nodes": [{"id": 0, "parent": None, "attrs": [0, 0]}]})
        with pytest.raises(M.SchemaError, match="schema_version"):
            M.from_dict({"nodes": []})
        with pytest.raises(M.SchemaError, match="invalid JSON"):
            M.from_json("{nope")
