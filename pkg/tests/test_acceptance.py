"""Acceptance criteria 1-9.

Each criterion prints one ``criterion N: PASS|FAIL - detail`` line (collected
in the pytest terminal summary). Run ``python3 tests/test_acceptance.py`` to
evaluate them without pytest.
"""
import math
import random
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
from conftest import ACCEPTANCE_LINES  # noqa: E402

from remat.approx import (RoundingMode, RoundingOptions, approx_samples, approx_schedule,  # noqa: E402
                          direct_rounding_feasible_count, repair)
from remat.baselines import (STRATEGIES, ap_generalize, chen_greedy, chen_sqrt, checkpoint_all,  # noqa: E402
                             linearized_generalize, strategy_schedules)
from remat.costmodel import scale_memory  # noqa: E402
from remat.errors import InfeasibleError  # noqa: E402
from remat.formulation import RematProblem, build  # noqa: E402
from remat.graph import (CompGraph, NodeInfo, make_chain, make_linear_training,  # noqa: E402
                         make_residual_training, make_unet_training, random_dag)
from remat.plan import generate_plan, hoist_deallocations  # noqa: E402
from remat.schedule import constraint_violations, from_rs  # noqa: E402
from remat.sim import minimal_budget_bound, oracle_min_budget, oracle_optimal, simulate  # noqa: E402
from remat.solver import SolveOptions, solve_lp, solve_milp  # noqa: E402


def report(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def ample_budget(g):
    return simulate(g, generate_plan(g, checkpoint_all(g))).peak_mem


def desk_fixtures():
    return ([make_linear_training(L) for L in range(2, 9)]
            + [make_residual_training(b) for b in (1, 2, 3)]
            + [make_unet_training(d) for d in (1, 2, 3)])


# free indicators implied by the linearized rows ------------------------------------

def _free_row_pairs(m):
    """For every free column, its two defining rows."""
    F = m.layout.F
    fcols = set(F[F >= 0].tolist())
    A = m.A.tocsr()
    out = {}
    for r, name in enumerate(m.row_names):
        if not name.startswith(("FLO_", "FHI_")):
            continue
        cols = A.indices[A.indptr[r]:A.indptr[r + 1]]
        vals = A.data[A.indptr[r]:A.indptr[r + 1]]
        (f, a), = [(c, v) for c, v in zip(cols, vals) if c in fcols]
        out.setdefault(f, []).append((r, a))
    return out


def free_from_rows(m, X):
    """Feasible values of every free column given the other entries of ``X``.

    ``X`` holds one solution vector per row, free columns ignored. Returns
    ``(ok0, ok1)``: boolean arrays (samples x free columns, in layout order)
    telling whether 0 and 1 satisfy both defining rows.
    """
    F = m.layout.F
    fcols = F[F >= 0]
    X = np.array(X, float)
    X[:, fcols] = 0.0
    act = (m.A @ X.T).T
    pairs = _free_row_pairs(m)
    ok = [np.ones((len(X), len(fcols)), bool) for _ in range(2)]
    for j, f in enumerate(fcols):
        for r, a in pairs[f]:
            for v in (0, 1):
                lhs = act[:, r] + a * v
                s, b = m.senses[r], m.rhs[r]
                ok[v][:, j] &= (lhs <= b + 1e-9) if s == "L" else (lhs >= b - 1e-9)
    return ok


def product_free(m, X):
    """Deallocation product for every free column, vectorized over samples."""
    g, lay = m.layout.graph, m.layout
    T = lay.stages
    out = np.zeros((len(X), int(np.sum(lay.F >= 0))), bool)
    col = 0
    for t in range(T):
        for e, (i, k) in enumerate(g.edges):
            if lay.F[t, e] < 0:
                continue
            keep = X[:, lay.R[t, k]] == 1
            if t + 1 < T and lay.S[t + 1, i] >= 0:
                keep &= X[:, lay.S[t + 1, i]] == 0
            for j in g.users[i]:
                if j > k and lay.R[t, j] >= 0:
                    keep &= X[:, lay.R[t, j]] == 0
            out[:, col] = keep
            col += 1
    return out


# criteria --------------------------------------------------------------------------

def criterion_1():
    checked, bad = 0, []
    for L in (1, 2, 3, 4):
        g = make_linear_training(L)
        for b in range(oracle_min_budget(g), ample_budget(g) + 1):
            ref = oracle_optimal(g, b).cost
            got = solve_milp(build(RematProblem(g, b))).objective
            checked += 1
            if got != ref:
                bad.append((L, b, got, ref))
    return report(1, not bad and checked > 0,
                  f"{checked} (layers, budget) pairs, ILP == oracle on all" if not bad else f"mismatches {bad}")


def criterion_2():
    g = make_linear_training(8)
    m = build(RematProblem(g, 4))
    t0 = time.perf_counter()
    s = solve_milp(m, SolveOptions(time_limit=60))
    elapsed = time.perf_counter() - t0
    lp = solve_lp(m).objective
    gap = float(s.objective) / lp
    lp_nf = solve_lp(build(RematProblem(g, 4, frontier=False))).objective
    gap_nf = float(s.objective) / lp_nf
    ok = (s.status.value == "optimal" and elapsed <= 60 and abs(gap - 1.18) <= 0.10 and gap_nf >= 10)
    return report(2, ok, f"ILP {s.objective} ({s.status.value}, {elapsed:.1f}s), frontier gap {gap:.4f}, "
                         f"non-frontier gap {gap_nf:.3f}")


def criterion_3(samples=1200):
    rng = random.Random(3)
    nrng = np.random.default_rng(3)
    schedules = violations = 0
    while schedules < samples:
        g = random_dag(rng.randint(2, 8), rng, edge_prob=rng.choice((0.25, 0.4, 0.6)))
        m = build(RematProblem(g))
        n = g.n
        S = np.tril(nrng.random((n, n)) < nrng.random(), -1).astype(np.int8)
        R = repair(g, S)
        # extra recomputation keeps the fuzz away from minimal schedules
        extra = np.tril(nrng.random((n, n)) < 0.2 * nrng.random()).astype(np.int8)
        R = repair(g, S, np.maximum(R, extra))
        sched = from_rs(g, R, S)
        x = np.zeros(m.num_vars)
        for idx, arr in ((m.layout.R, R), (m.layout.S, S)):
            x[idx[idx >= 0]] = arr[idx >= 0]
        ok0, ok1 = free_from_rows(m, x[None, :])
        # exactly one value satisfies the rows; take it
        assert np.all(ok0 ^ ok1)
        free = np.zeros_like(sched.free)
        free[m.layout.F >= 0] = ok1[0].astype(np.int8)
        for t in range(n):
            for i in range(n):
                if sum(int(free[t, g.edge_index[(i, k)]]) for k in g.users[i]) > 1:
                    violations += 1
        schedules += 1
    return report(3, violations == 0, f"{schedules} fuzzed schedules, {violations} double deallocations")


def small_dags(max_n=4):
    for n in range(1, max_n + 1):
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        for mask in range(1 << len(pairs)):
            edges = tuple(p for b, p in enumerate(pairs) if mask >> b & 1)
            if any(not any(e[0] == i for e in edges) for i in range(n - 1)):
                continue
            nodes = tuple(NodeInfo(f"v{i + 1}", 1, 1, True) for i in range(n))
            yield CompGraph(nodes, edges, n)


def criterion_4():
    graphs = mismatches = combos = 0
    for g in small_dags(4):
        m = build(RematProblem(g))
        lay = m.layout
        rcols, scols = lay.R[lay.R >= 0], lay.S[lay.S >= 0]
        k = len(rcols) + len(scols)
        bits = ((np.arange(1 << k)[:, None] >> np.arange(k)) & 1).astype(float)
        X = np.zeros((len(bits), m.num_vars))
        X[:, rcols] = bits[:, :len(rcols)]
        X[:, scols] = bits[:, len(rcols):]
        ok0, ok1 = free_from_rows(m, X)
        want = product_free(m, X)
        mismatches += int(np.sum(np.any((ok1 != want) | (ok0 != ~want), axis=1)))
        graphs += 1
        combos += len(X)
    return report(4, mismatches == 0,
                  f"{graphs} DAGs, {combos} binary (R, S) assignments, {mismatches} mismatches")


def criterion_5():
    logs, instances, feasible, row_errors = [], 0, 0, 0
    for g in desk_fixtures():
        for b in range(minimal_budget_bound(g), ample_budget(g) + 1):
            try:
                opt = solve_milp(build(RematProblem(g, b)), SolveOptions(time_limit=30)).objective
            except InfeasibleError:
                continue
            instances += 1
            try:
                s, rep = approx_schedule(RematProblem(g, b))
            except InfeasibleError:
                continue
            viol = [v for v in constraint_violations(g, s) if not v.startswith("memory")]
            row_errors += bool(viol)
            if rep.feasible:
                feasible += 1
                logs.append(math.log(s.objective / opt))
    geo = math.exp(sum(logs) / len(logs)) if logs else math.inf
    g = make_linear_training(8)
    _, rnd = approx_samples(RematProblem(g, 4), RoundingOptions(mode=RoundingMode.RANDOMIZED, samples=50, seed=0))
    _, det = approx_samples(RematProblem(g, 4), RoundingOptions())
    det_mean = float(np.mean([float(s.schedule.objective) for s in det]))
    rnd_mean = float(np.mean([float(s.schedule.objective) for s in rnd]))
    ok = geo <= 1.10 and row_errors == 0 and det_mean <= rnd_mean
    return report(5, ok, f"geomean {geo:.3f} over {feasible}/{instances} budget-feasible roundings, "
                         f"{row_errors} rows violated, deterministic {det_mean:.1f} <= randomized {rnd_mean:.1f}")


def criterion_6():
    cache = {}
    compared = worse = 0
    for g in desk_fixtures():
        for strategy in STRATEGIES:
            for s in strategy_schedules(g, strategy):
                b = s.peak_accounted
                key = (id(g), b)
                if key not in cache:
                    cache[key] = solve_milp(build(RematProblem(g, b))).objective
                compared += 1
                worse += cache[key] > s.objective
    same = True
    for g in [make_chain(n) for n in (1, 2, 7, 16, 31)] + [make_linear_training(L) for L in (2, 5, 8)]:
        ref = chen_sqrt(g).sorted()
        same &= ap_generalize(g, "sqrt").sorted() == ref == linearized_generalize(g, "sqrt").sorted()
        for b in (1, 2, 3, 4, 6, 10):
            ref = chen_greedy(g, b).sorted()
            same &= ap_generalize(g, "greedy", b).sorted() == ref == linearized_generalize(g, "greedy", b).sorted()
    return report(6, worse == 0 and same,
                  f"{compared} baseline schedules, ILP cheaper or equal on all; "
                  f"AP/linearized sets {'identical' if same else 'differ'} on paths")


def criterion_7(count=100):
    rng = random.Random(7)
    solved = bad = 0
    while solved < count:
        g = random_dag(rng.randint(2, 8), rng, edge_prob=0.35)
        budget = minimal_budget_bound(g) + rng.randint(0, 4)
        try:
            s = solve_milp(build(RematProblem(g, budget)))
        except InfeasibleError:
            continue
        solved += 1
        plan = generate_plan(g, s)
        rep = simulate(g, plan, budget)
        h = hoist_deallocations(plan)
        hrep = simulate(g, h, budget)
        if (rep.total_cost != s.objective or rep.peak_mem > budget or hrep.peak_mem > rep.peak_mem
                or hoist_deallocations(h) != h or not rep.terminal_computed):
            bad += 1
    return report(7, bad == 0, f"{solved} solved instances, {bad} failures")


def _oracle_batch(g, budget, limit=64):
    best = 0
    for B in range(1, limit + 1):
        try:
            oracle_optimal(scale_memory(g, B), budget)
            best = B
        except InfeasibleError:
            break
    return best


def criterion_8():
    import contextlib
    import io

    from remat.cli import main

    g = make_linear_training(2)
    got, ref = [], []
    for budget in (4, 6, 8, 10, 12):
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            code = main(["maxbatch", "--graph", "linear:2", "--budget", str(budget), "--cost-cap", "none"])
        line = [x for x in buf.getvalue().splitlines() if x.startswith("max_batch:")][0]
        got.append(int(line.split(":")[1]) if code == 0 else None)
        ref.append(_oracle_batch(g, budget))
    ok = got == ref and got == sorted(got)
    return report(8, ok, f"B* {got}, oracle {ref}")


def criterion_9(samples=1000):
    g = make_linear_training(8)
    count = direct_rounding_feasible_count(RematProblem(g, 4), samples, seed=0)
    return report(9, count == 0, f"{count} feasible out of {samples} direct roundings")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 10)])
def test_acceptance(criterion):
    assert criterion()


if __name__ == "__main__":
    results = [c() for c in CRITERIA]
    sys.exit(0 if all(results) else 1)
