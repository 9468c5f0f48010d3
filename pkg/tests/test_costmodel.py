import json
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from remat.baselines import checkpoint_all
from remat.costmodel import (ProfileError, ProfileTable, apply_profile, flop_costs, load_profile,
                             scale_memory)
from remat.graph import CompGraph, GraphError, NodeInfo, make_chain, make_linear_training
from remat.plan import generate_plan
from remat.sim import simulate


def test_unit_profile():
    g = make_linear_training(3, cost=7)
    p = ProfileTable({v.name: 1.0 for v in g.nodes})
    h = apply_profile(g, p)
    assert h.costs == [1] * g.n
    assert h.edges == g.edges and h.mems == g.mems
    assert h.cost_unit == "ms"


def test_missing_node_named():
    g = make_chain(3)
    with pytest.raises(ProfileError, match="v2"):
        apply_profile(g, ProfileTable({"v1": 1, "v3": 1}))


def test_negative_profile_cost():
    with pytest.raises(ProfileError):
        ProfileTable({"v1": -1})


def test_apply_profile_idempotent():
    g = make_linear_training(2)
    p = ProfileTable({v.name: Fraction(i + 1, 3) for i, v in enumerate(g.nodes)})
    once = apply_profile(g, p)
    assert apply_profile(once, p) == once


def test_units_cannot_mix():
    g = make_chain(2)
    g_ms = apply_profile(g, ProfileTable({"v1": 1, "v2": 2}, unit="ms"))
    with pytest.raises(ProfileError):
        apply_profile(g_ms, ProfileTable({"v1": 1, "v2": 2}, unit="flop"))
    with pytest.raises(ProfileError):
        ProfileTable({}, unit="seconds")


def test_flop_costs():
    g = flop_costs(make_chain(2), {"v1": 10})
    assert g.costs == [10, 1] and g.cost_unit == "flop"


def test_profile_json(tmp_path):
    p = tmp_path / "p.json"
    p.write_text(json.dumps({"batch_size": 4, "unit": "flop", "costs": {"v1": 2.5}, "device": "x"}))
    t = load_profile(p)
    assert t.batch_size == 4 and t.entries == {"v1": Fraction(5, 2)} and t.metadata == {"device": "x"}
    assert ProfileTable.from_dict(t.to_dict()).entries == t.entries


def test_scale_memory_basic():
    g = CompGraph(tuple(NodeInfo(f"v{i}", 1, m) for i, m in enumerate([1, 2, 3])), ((0, 1), (1, 2)), 3, 5)
    assert scale_memory(g, 1) == g
    h = scale_memory(g, 4)
    assert h.mems == [4, 8, 12]
    assert h.constant_overhead == 5
    with pytest.raises(GraphError):
        scale_memory(g, 0)
    with pytest.raises(OverflowError):
        scale_memory(g, 2**62)


@given(st.integers(1, 50), st.integers(1, 50))
def test_scale_memory_composes(a, b):
    g = make_linear_training(2, mem=3)
    assert scale_memory(g, a * b) == scale_memory(scale_memory(g, a), b)


def test_checkpoint_all_peak_scales_affinely():
    g = make_linear_training(4, mem=2, constant_overhead=10)

    def peak(B):
        h = scale_memory(g, B)
        return simulate(h, generate_plan(h, checkpoint_all(h))).peak_mem

    p1 = peak(1)
    for B in (2, 4):
        assert peak(B) == 10 + B * (p1 - 10)
