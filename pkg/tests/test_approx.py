import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from remat.approx import (RoundingMode, RoundingOptions, approx_samples, approx_schedule, repair,
                          round_checkpoints, two_phase_round)
from remat.baselines import checkpoint_all
from remat.errors import InfeasibleError
from remat.formulation import RematProblem, build, fractional_matrices
from remat.graph import make_chain, make_linear_training, make_residual_training, random_dag
from remat.schedule import constraint_violations, from_rs
from remat.solver import solve_lp, solve_milp


def test_options_validation():
    with pytest.raises(ValueError):
        RoundingOptions(threshold=1)
    with pytest.raises(ValueError):
        RoundingOptions(samples=0)
    with pytest.raises(ValueError):
        RoundingOptions(epsilon=1)
    assert RoundingOptions(mode="randomized").mode is RoundingMode.RANDOMIZED


def test_threshold_is_strict():
    S = np.array([[0.5, 0.51, 0.49]])
    assert round_checkpoints(S).tolist() == [[0, 1, 0]]


def test_zero_checkpoints_recompute_prefix():
    for n in range(1, 8):
        g = make_chain(n)
        s = two_phase_round(np.zeros((n, n)), g)
        assert s.R.tolist() == np.tril(np.ones((n, n), dtype=int)).tolist()


def test_integral_feasible_input_gives_minimal_completion(linear8):
    s = solve_milp(build(RematProblem(linear8, 4)))
    r = two_phase_round(s.S.astype(float), linear8)
    assert np.array_equal(r.S, s.S)
    assert r.objective <= s.objective
    # the ILP optimum is already the cheapest completion of its own S
    assert r.objective == s.objective


def random_case(seed):
    rng = random.Random(seed)
    if rng.random() < 0.4:
        g = make_linear_training(rng.randint(1, 4))
    else:
        g = random_dag(rng.randint(2, 9), rng, edge_prob=0.35)
    n = g.n
    nrng = np.random.default_rng(seed)
    S = np.tril(nrng.random((n, n)) < nrng.random(), -1).astype(np.int8)
    return g, S


def violated(g, R, S):
    return constraint_violations(g, from_rs(g, R, S))


@given(st.integers(0, 10**6))
def test_repair_satisfies_rows(seed):
    g, S = random_case(seed)
    R = repair(g, S)
    assert violated(g, R, S) == []


@given(st.integers(0, 10**6))
def test_repair_is_minimal(seed):
    g, S = random_case(seed)
    R = repair(g, S)
    T, n = R.shape
    for t in range(T):
        for i in range(n):
            if R[t, i] and t != i:
                R2 = R.copy()
                R2[t, i] = 0
                bad = violated(g, R2, S)
                assert any(b.startswith(("dependency", "retention")) for b in bad)


@given(st.integers(0, 10**6))
def test_repair_orders_agree(seed):
    g, S = random_case(seed)
    assert np.array_equal(repair(g, S), repair(g, S, order="dependency-first"))


def test_repair_only_sets_entries():
    g, S = random_case(5)
    R0 = np.eye(g.n, dtype=np.int8)
    R = repair(g, S, R0)
    assert np.all(R >= R0)
    assert int(R.sum()) <= g.n ** 2


def test_repair_rejects_initial_checkpoints():
    g = make_chain(2)
    with pytest.raises(InfeasibleError):
        repair(g, np.ones((2, 2), dtype=np.int8))
    with pytest.raises(ValueError):
        repair(g, np.zeros((2, 2)), order="sideways")


def test_ample_budget_matches_checkpoint_all():
    for g in (make_linear_training(4), make_residual_training(2)):
        s, rep = approx_schedule(RematProblem(g, 1000))
        assert rep.feasible
        assert s.objective == checkpoint_all(g).objective


@pytest.mark.parametrize("budget", [4, 5, 6, 8])
def test_sandwich(linear8, budget):
    lp = solve_lp(build(RematProblem(linear8, budget))).objective
    ilp = solve_milp(build(RematProblem(linear8, budget))).objective
    s, rep = approx_schedule(RematProblem(linear8, budget))
    assert lp <= float(ilp) + 1e-9
    if rep.feasible:
        assert ilp <= s.objective
    assert rep.total_cost == s.objective
    assert constraint_violations(linear8, s) == []


def test_infeasible_rounding_is_flagged_not_hidden():
    g = make_linear_training(4)
    s, rep = approx_schedule(RematProblem(g, 3), RoundingOptions(epsilon=0))
    assert rep.feasible == (rep.peak_mem <= 3)
    if not rep.feasible:
        assert s.status.value == "infeasible"


def test_lp_infeasible_at_shrunk_budget():
    g = make_linear_training(2)
    with pytest.raises(InfeasibleError, match="smaller epsilon"):
        approx_schedule(RematProblem(g, 3), RoundingOptions(epsilon=Fraction(1, 2)))


def test_randomized_is_seeded(linear8):
    opts = RoundingOptions(mode="randomized", samples=10, seed=11)
    a, _ = approx_schedule(RematProblem(linear8, 5), opts)
    b, _ = approx_schedule(RematProblem(linear8, 5), opts)
    assert a.same_decisions(b)


def test_deterministic_beats_randomized_mean(linear8):
    problem = RematProblem(linear8, 4)
    _, det = approx_samples(problem)
    _, rnd = approx_samples(problem, RoundingOptions(mode="randomized", samples=50, seed=0))
    mean = sum(s.report.total_cost for s in rnd) / len(rnd)
    assert det[0].report.total_cost <= mean


def test_epsilon_sweep_records_tradeoff(linear8):
    rows = []
    for eps in (0, Fraction(1, 10), Fraction(3, 10)):
        try:
            s, rep = approx_schedule(RematProblem(linear8, 6), RoundingOptions(epsilon=eps))
        except InfeasibleError:
            continue
        rows.append((eps, s.objective, rep.feasible))
    assert rows
    assert all(isinstance(c, Fraction) for _, c, _ in rows)


def test_fractional_matrix_shapes(linear8):
    m = build(RematProblem(linear8, 4, relax=True))
    mats = fractional_matrices(m, solve_lp(m).x)
    assert mats["S"].shape == (17, 17) and np.all(np.triu(mats["S"]) == 0)
