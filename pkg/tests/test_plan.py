import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from remat.approx import repair
from remat.baselines import checkpoint_all, schedule_from_checkpoints, chen_sqrt
from remat.formulation import RematProblem, build
from remat.graph import make_chain, make_linear_training, random_dag
from remat.plan import (Compute, Deallocate, ExecutionPlan, PlanError, count_frees, generate_plan,
                        hoist_deallocations, parse_plan_text, plan_cost)
from remat.schedule import from_rs
from remat.sim import simulate
from remat.solver import solve_milp


def random_schedule(seed):
    rng = random.Random(seed)
    g = random_dag(rng.randint(1, 8), rng, edge_prob=0.35)
    nrng = np.random.default_rng(seed)
    S = np.tril(nrng.random((g.n, g.n)) < nrng.random(), -1).astype(np.int8)
    return g, from_rs(g, repair(g, S), S)


@given(st.integers(0, 10**6))
def test_plan_matches_schedule(seed):
    g, s = random_schedule(seed)
    plan = generate_plan(g, s)
    rep = simulate(g, plan)
    assert rep.terminal_computed
    assert rep.total_cost == s.objective == plan_cost(g, plan)
    assert len(plan.computes()) == int(s.R.sum())
    deallocs = [x for x in plan.statements if isinstance(x, Deallocate)]
    assert len(deallocs) >= count_frees(s)
    # every register is written once and freed at most once
    regs = [x.register for x in plan.computes()]
    assert len(set(regs)) == len(regs) == plan.register_count
    assert len({d.register for d in deallocs}) == len(deallocs)


@given(st.integers(0, 10**6))
def test_peak_never_exceeds_accounting(seed):
    g, s = random_schedule(seed)
    rep = simulate(g, generate_plan(g, s))
    assert rep.peak_mem <= s.peak_accounted


@given(st.integers(0, 10**6))
def test_hoist_is_monotone_and_idempotent(seed):
    g, s = random_schedule(seed)
    plan = generate_plan(g, s)
    h = hoist_deallocations(plan)
    assert hoist_deallocations(h) == h
    before, after = simulate(g, plan), simulate(g, h)
    assert after.peak_mem <= before.peak_mem
    assert after.total_cost == before.total_cost
    assert [x for x in h.statements if isinstance(x, Compute)] == plan.computes()


def test_hoist_frees_dead_values_early():
    g = make_chain(3)
    plan = ExecutionPlan((Compute(0, 0), Compute(1, 1, (0,)), Compute(2, 2, (1,)),
                          Deallocate(0), Deallocate(1)), 3)
    h = hoist_deallocations(plan)
    assert h.statements == (Compute(0, 0), Compute(1, 1, (0,)), Deallocate(0),
                            Compute(2, 2, (1,)), Deallocate(1))
    assert simulate(g, h).peak_mem == 2 < simulate(g, plan).peak_mem


def test_hoist_rejects_free_before_use():
    plan = ExecutionPlan((Deallocate(0), Compute(0, 0)), 1)
    with pytest.raises(PlanError):
        hoist_deallocations(plan)


def test_text_round_trip(linear8):
    s = solve_milp(build(RematProblem(linear8, 4)))
    plan = generate_plan(linear8, s)
    text = plan.to_text(linear8)
    assert text.splitlines()[0] == "%0 = compute f1"
    back = parse_plan_text(linear8, text)
    assert back.statements == plan.statements
    assert simulate(linear8, back).peak_mem <= 4


def test_json_form(linear8):
    import json

    plan = generate_plan(linear8, checkpoint_all(linear8))
    data = json.loads(plan.to_json(linear8))
    assert data["register_count"] == plan.register_count
    assert data["statements"][1] == {"op": "compute", "node": "f2", "register": 1, "args": [0]}


def test_parse_errors(linear8):
    with pytest.raises(PlanError, match="unknown node"):
        parse_plan_text(linear8, "%0 = compute nope\n")
    with pytest.raises(PlanError, match="not resident"):
        parse_plan_text(linear8, "%0 = compute f2\n")
    with pytest.raises(PlanError, match="cannot parse"):
        parse_plan_text(linear8, "launch %0\n")


def test_infeasible_schedule_rejected():
    g = make_chain(3)
    R = np.eye(3, dtype=np.int8)
    S = np.zeros((3, 3), dtype=np.int8)
    with pytest.raises(PlanError):
        generate_plan(g, from_rs(g, R, S))


def test_stage_starts_cover_plan():
    g = make_linear_training(4)
    plan = generate_plan(g, schedule_from_checkpoints(g, chen_sqrt(g)))
    assert len(plan.stage_starts) == g.n
    assert list(plan.stage_starts) == sorted(plan.stage_starts)
    assert isinstance(plan.statements[plan.stage_starts[-1]], Compute)
