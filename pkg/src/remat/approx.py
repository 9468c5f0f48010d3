"""Near-optimal schedules from the LP relaxation by two-phase rounding.

Phase 1 rounds the fractional checkpoint matrix ``S``; phase 2 completes it
with the cheapest compute matrix ``R`` that makes every retained value
available, by only ever switching entries of ``R`` on.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .errors import InfeasibleError
from .formulation import RematProblem, build, fractional_matrices
from .graph import CompGraph, as_fraction
from .plan import generate_plan
from .schedule import Schedule, Status, from_rs
from .sim import SimReport, simulate
from .solver import solve_lp


class RoundingMode(str, enum.Enum):
    DETERMINISTIC = "deterministic"
    RANDOMIZED = "randomized"


@dataclass(frozen=True)
class RoundingOptions:
    mode: RoundingMode = RoundingMode.DETERMINISTIC
    threshold: Fraction = Fraction(1, 2)
    samples: int = 1
    seed: int = 0
    epsilon: Fraction = Fraction(1, 10)

    def __post_init__(self):
        object.__setattr__(self, "mode", RoundingMode(self.mode))
        object.__setattr__(self, "threshold", as_fraction(self.threshold))
        object.__setattr__(self, "epsilon", as_fraction(self.epsilon))
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie strictly between 0 and 1")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if not 0 <= self.epsilon < 1:
            raise ValueError("epsilon must lie in [0, 1)")


def round_checkpoints(S_star, opts: RoundingOptions = RoundingOptions(), rng=None) -> np.ndarray:
    """Phase 1: threshold (or sample) the fractional checkpoint matrix."""
    S_star = np.clip(np.asarray(S_star, float), 0.0, 1.0)
    if opts.mode is RoundingMode.DETERMINISTIC:
        return (S_star > float(opts.threshold)).astype(np.int8)
    rng = np.random.default_rng(opts.seed) if rng is None else rng
    return (rng.random(S_star.shape) < S_star).astype(np.int8)


def repair(g: CompGraph, S, R=None, *, order: str = "retention-first") -> np.ndarray:
    """Phase 2: smallest ``R`` containing ``R`` (default identity) that satisfies
    the dependency and retention rows for the fixed checkpoint matrix ``S``.

    ``order="retention-first"`` runs one retention pass then one dependency
    pass per stage, right to left. ``order="dependency-first"`` alternates the
    two passes starting with dependencies until nothing changes; both reach
    the same matrix.
    """
    S = np.asarray(S, dtype=np.int8)
    T, n = S.shape
    if R is None:
        R = np.zeros((T, n), dtype=np.int8)
        for t in range(min(T, n)):
            R[t, t] = 1
        if T < n:
            R[T - 1, n - 1] = 1
    else:
        R = np.array(R, dtype=np.int8)
    if T and S[0].any():
        raise InfeasibleError("values are checkpointed before any stage could compute them")

    def retention():
        changed = False
        for t in range(1, T):
            need = (S[t] > R[t - 1] + S[t - 1])
            if need.any():
                R[t - 1, need] = 1
                changed = True
        return changed

    def dependency():
        changed = False
        for t in range(T):
            for k in range(n - 1, -1, -1):
                if not R[t, k]:
                    continue
                for i in g.deps[k]:
                    if not R[t, i] and not S[t, i]:
                        R[t, i] = 1
                        changed = True
        return changed

    if order == "retention-first":
        retention()
        dependency()
    elif order == "dependency-first":
        dependency()
        while retention():
            if not dependency():
                break
    else:
        raise ValueError(f"unknown repair order {order!r}")
    return R


def two_phase_round(S_star, g: CompGraph, opts: RoundingOptions | None = None, *, rng=None) -> Schedule:
    """Integral schedule from a fractional checkpoint matrix.

    Budget feasibility is not enforced here; simulate the result to check it.
    """
    opts = opts or RoundingOptions()
    S = round_checkpoints(S_star, opts, rng)
    S[0] = 0
    R = repair(g, S)
    return from_rs(g, R, S, source=f"approx-{opts.mode.value}")


@dataclass
class RoundingSample:
    schedule: Schedule
    report: SimReport


def _evaluate(g, sched, budget) -> SimReport:
    return simulate(g, generate_plan(g, sched, check=False), budget)


def approx_samples(problem: RematProblem, opts: RoundingOptions = RoundingOptions()):
    """Relaxation solve followed by every rounding sample, each simulated
    against the full (unshrunk) budget.

    Returns ``(lp_solution, samples)``.
    """
    shrunk = replace(problem, relax=True, epsilon=opts.epsilon)
    m = build(shrunk)
    try:
        lp = solve_lp(m)
    except InfeasibleError as exc:
        raise InfeasibleError(
            f"relaxation infeasible at (1 - {opts.epsilon}) of the budget; try a smaller epsilon"
        ) from exc
    S_star = fractional_matrices(m, lp.x)["S"]
    g = problem.graph
    count = 1 if opts.mode is RoundingMode.DETERMINISTIC else opts.samples
    rng = np.random.default_rng(opts.seed)
    out = []
    for _ in range(count):
        sched = two_phase_round(S_star, g, opts, rng=rng)
        sched.bound = lp.objective
        out.append(RoundingSample(sched, _evaluate(g, sched, problem.budget)))
    return lp, out


def approx_schedule(problem: RematProblem, opts: RoundingOptions = RoundingOptions()):
    """LP relaxation plus two-phase rounding.

    Returns ``(schedule, report)``. In randomized mode the cheapest feasible
    sample wins (ties go to the earliest sample); if no sample fits, the
    cheapest one is returned with ``report.feasible`` false.
    """
    _, samples = approx_samples(problem, opts)
    feasible = [s for s in samples if s.report.feasible]
    pool = feasible or samples
    best = min(pool, key=lambda s: s.report.total_cost)  # min keeps the first on ties
    best.schedule.status = Status.FEASIBLE if best.report.feasible else Status.INFEASIBLE
    return best.schedule, best.report


def direct_rounding_feasible_count(problem: RematProblem, samples: int, seed: int = 0) -> int:
    """How many independent Bernoulli roundings of both ``R*`` and ``S*`` are
    feasible schedules (no repair step)."""
    from .schedule import constraint_violations

    m = build(replace(problem, relax=True))
    lp = solve_lp(m)
    mats = fractional_matrices(m, lp.x)
    R_star = np.clip(mats["R"], 0, 1)
    S_star = np.clip(mats["S"], 0, 1)
    rng = np.random.default_rng(seed)
    g = problem.graph
    budget = None if problem.budget == math.inf else problem.budget
    ok = 0
    for _ in range(samples):
        R = (rng.random(R_star.shape) < R_star).astype(np.int8)
        S = (rng.random(S_star.shape) < S_star).astype(np.int8)
        sched = from_rs(g, R, S)
        if not constraint_violations(g, sched, frontier=problem.frontier, budget=budget):
            ok += 1
    return ok
