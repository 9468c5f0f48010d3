"""Lowering of a (graph, budget) pair to a mixed-integer linear program.

Decision families (0-based stage ``t`` and node ``i``):

* ``R[t, i]`` binary, node ``i`` is computed in stage ``t``;
* ``S[t, i]`` binary, value ``i`` is resident at the start of stage ``t``;
* ``U[t, k]`` continuous, memory in use (``k = 0`` at stage start, ``k >= 1``
  after evaluating node ``k - 1``);
* ``F[t, i, k]`` binary for each edge ``(i, k)``, value ``i`` is freed right
  after ``k`` is evaluated.

With ``frontier=True`` node ``t`` is first computed in stage ``t`` and
``R``/``S`` only exist on the lower triangle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from .errors import BudgetError, InfeasibleError, RematError, SolverTimeout
from .graph import CompGraph, as_fraction
from .schedule import Schedule, Status, memory_usage, schedule_cost

INF = math.inf


class FormulationError(RematError, ValueError):
    pass


@dataclass(frozen=True)
class RematProblem:
    graph: CompGraph
    budget: object = INF
    stages: int | None = None
    frontier: bool = True
    epsilon: Fraction = Fraction(0)
    cost_cap: object = None
    relax: bool = False

    def __post_init__(self):
        if self.budget != INF:
            object.__setattr__(self, "budget", as_fraction(self.budget))
        object.__setattr__(self, "epsilon", as_fraction(self.epsilon))
        if self.cost_cap is not None:
            object.__setattr__(self, "cost_cap", as_fraction(self.cost_cap))
        if self.stages is None:
            object.__setattr__(self, "stages", self.graph.n)
        if not 0 <= self.epsilon < 1:
            raise FormulationError("epsilon must lie in [0, 1)")

    @property
    def effective_budget(self):
        if self.budget == INF:
            return INF
        return (1 - self.epsilon) * self.budget


@dataclass(frozen=True, eq=False)
class Layout:
    """Column indices of each variable family (``-1`` where absent)."""

    graph: CompGraph
    stages: int
    frontier: bool
    R: np.ndarray
    S: np.ndarray
    U: np.ndarray
    F: np.ndarray


@dataclass(frozen=True, eq=False)
class MilpInstance:
    """A linear program ``min c.x`` over rows ``A x (<=|>=|=) rhs`` and box bounds.

    ``senses`` holds ``'L'``, ``'G'`` or ``'E'`` per row; ``integer`` marks
    integrality-restricted columns.
    """

    var_names: tuple
    c: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integer: np.ndarray
    A: sp.csr_matrix
    senses: np.ndarray
    rhs: np.ndarray
    row_names: tuple
    name: str = "REMAT"
    layout: Layout | None = field(default=None, repr=False)
    problem: RematProblem | None = field(default=None, repr=False)

    @property
    def num_vars(self) -> int:
        return len(self.var_names)

    @property
    def num_rows(self) -> int:
        return len(self.row_names)

    def relaxed(self) -> "MilpInstance":
        return replace(self, integer=np.zeros_like(self.integer))

    def with_bounds(self, lb, ub) -> "MilpInstance":
        return replace(self, lb=np.asarray(lb, float), ub=np.asarray(ub, float))

    def row_activity(self, x) -> np.ndarray:
        return self.A @ np.asarray(x, float)

    def violations(self, x, tol: float = 1e-6) -> list:
        """Indices of rows or bounds violated by ``x`` beyond ``tol``."""
        x = np.asarray(x, float)
        act = self.row_activity(x)
        bad = []
        for r, (s, a, b) in enumerate(zip(self.senses, act, self.rhs)):
            if (s == "L" and a > b + tol) or (s == "G" and a < b - tol) or (s == "E" and abs(a - b) > tol):
                bad.append(self.row_names[r])
        for j in np.flatnonzero((x < self.lb - tol) | (x > self.ub + tol)):
            bad.append(f"bound:{self.var_names[j]}")
        return bad

    def objective(self, x) -> float:
        return float(self.c @ np.asarray(x, float))


class _Builder:
    def __init__(self):
        self.names, self.c, self.lb, self.ub, self.integer = [], [], [], [], []
        self.rows, self.cols, self.vals = [], [], []
        self.row_names, self.senses, self.rhs = [], [], []

    def var(self, name, lb=0.0, ub=1.0, integer=True, cost=0.0) -> int:
        self.names.append(name)
        self.c.append(float(cost))
        self.lb.append(lb)
        self.ub.append(ub)
        self.integer.append(integer)
        return len(self.names) - 1

    def row(self, name, terms, sense, rhs) -> None:
        r = len(self.row_names)
        merged = {}
        for j, v in terms:
            if j >= 0:
                merged[j] = merged.get(j, 0.0) + float(v)
        for j in sorted(merged):
            if merged[j] != 0.0:
                self.rows.append(r)
                self.cols.append(j)
                self.vals.append(merged[j])
        self.row_names.append(name)
        self.senses.append(sense)
        self.rhs.append(float(rhs))

    def finish(self, **kw) -> MilpInstance:
        m, n = len(self.row_names), len(self.names)
        A = sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(m, n))
        return MilpInstance(
            var_names=tuple(self.names),
            c=np.array(self.c, float),
            lb=np.array(self.lb, float),
            ub=np.array(self.ub, float),
            integer=np.array(self.integer, bool),
            A=A,
            senses=np.array(self.senses, dtype="<U1"),
            rhs=np.array(self.rhs, float),
            row_names=tuple(self.row_names),
            **kw,
        )


def hazard_bound(g: CompGraph, t: int, i: int, k: int, R_idx, S_idx, T: int) -> int:
    """Largest value the hazard count of ``F[t, i, k]`` can take.

    Two plus the number of consumers of ``i`` evaluated after ``k`` whose
    compute variable exists in stage ``t``.
    """
    return 2 + sum(1 for j in g.users[i] if j > k and R_idx[t, j] >= 0)


def build(problem: RematProblem) -> MilpInstance:
    g = problem.graph
    n, T = g.n, problem.stages
    frontier = problem.frontier
    if frontier and T != n:
        raise FormulationError(f"frontier-advancing stages need T = n = {n}, got {T}")
    if T < 1:
        raise FormulationError("need at least one stage")
    budget = problem.effective_budget
    if problem.budget != INF and problem.budget <= g.constant_overhead:
        raise BudgetError(
            f"budget {problem.budget} does not exceed the constant overhead {g.constant_overhead}"
        )
    integer = not problem.relax
    mem = g.mems
    b = _Builder()
    R = -np.ones((T, n), dtype=np.int64)
    S = -np.ones((T, n), dtype=np.int64)
    U = -np.ones((T, n + 1), dtype=np.int64)
    F = -np.ones((T, len(g.edges)), dtype=np.int64)

    for t in range(T):
        hi = t + 1 if frontier else n
        for i in range(hi):
            R[t, i] = b.var(f"R_{t + 1}_{i + 1}", integer=integer, cost=g.nodes[i].cost)
        for i in range(hi):
            S[t, i] = b.var(f"S_{t + 1}_{i + 1}", integer=integer)
        for k in range(hi + 1):
            U[t, k] = b.var(f"U_{t + 1}_{k}", 0.0, INF, integer=False)
        for e, (i, k) in enumerate(g.edges):
            if R[t, k] >= 0:
                F[t, e] = b.var(f"F_{t + 1}_{i + 1}_{k + 1}", integer=integer)

    def s_at(t, i):
        return S[t, i] if t < T else -1

    # correctness
    for t in range(T):
        for i, j in g.edges:
            if R[t, j] >= 0:
                b.row(f"DEP_{t + 1}_{i + 1}_{j + 1}", [(R[t, j], 1), (R[t, i], -1), (S[t, i], -1)], "L", 0)
    for t in range(1, T):
        for i in range(n):
            if S[t, i] >= 0:
                b.row(f"RET_{t + 1}_{i + 1}", [(S[t, i], 1), (R[t - 1, i], -1), (S[t - 1, i], -1)], "L", 0)
    if frontier:
        for t in range(T):
            b.row(f"FRONT_{t + 1}", [(R[t, t], 1)], "E", 1)
            b.row(f"SLOW_{t + 1}", [(S[t, i], 1) for i in range(t, n) if S[t, i] >= 0], "E", 0)
    else:
        b.row("INIT", [(S[0, i], 1) for i in range(n)], "E", 0)
        b.row("COVER", [(R[t, n - 1], 1) for t in range(T)], "G", 1)

    # memory accounting
    for t in range(T):
        b.row(
            f"UINIT_{t + 1}",
            [(U[t, 0], 1)] + [(S[t, i], -mem[i]) for i in range(n) if S[t, i] >= 0],
            "E",
            g.constant_overhead,
        )
        for k in range(1, n + 1):
            if U[t, k] < 0:
                break
            node = k - 1
            terms = [(U[t, k], 1), (U[t, k - 1], -1), (R[t, node], -mem[node])]
            if k >= 2:
                prev = k - 2
                for i in g.deps[prev]:
                    terms.append((F[t, g.edge_index[(i, prev)]], mem[i]))
            b.row(f"UREC_{t + 1}_{k}", terms, "E", 0)

    # deallocation indicators: 1 - F <= hazards <= kappa (1 - F)
    for t in range(T):
        for e, (i, k) in enumerate(g.edges):
            f = F[t, e]
            if f < 0:
                continue
            later = [R[t, j] for j in g.users[i] if j > k and R[t, j] >= 0]
            kappa = hazard_bound(g, t, i, k, R, S, T)
            # hazards = (1 - R[t,k]) + S[t+1,i] + sum(later)
            haz = [(R[t, k], -1), (s_at(t + 1, i), 1)] + [(j, 1) for j in later]
            b.row(f"FLO_{t + 1}_{i + 1}_{k + 1}", [(f, 1)] + haz, "G", 0)
            b.row(f"FHI_{t + 1}_{i + 1}_{k + 1}", [(f, kappa)] + haz, "L", kappa - 1)

    if budget != INF:
        cap = float(budget)
        for t in range(T):
            for k in range(n + 1):
                if U[t, k] >= 0:
                    b.row(f"BUDGET_{t + 1}_{k}", [(U[t, k], 1)], "L", cap)
    if problem.cost_cap is not None:
        b.row(
            "COSTCAP",
            [(R[t, i], g.nodes[i].cost) for t in range(T) for i in range(n) if R[t, i] >= 0],
            "L",
            float(problem.cost_cap),
        )
    layout = Layout(g, T, frontier, R, S, U, F)
    return b.finish(name="REMAT", layout=layout, problem=problem)


def _take(x, idx, fill=0.0):
    out = np.full(idx.shape, fill, dtype=float)
    mask = idx >= 0
    out[mask] = x[idx[mask]]
    return out


def fractional_matrices(m: MilpInstance, x) -> dict:
    """R, S, U and free arrays of a (possibly fractional) solution vector."""
    lay = m.layout
    x = np.asarray(x, float)
    return {
        "R": _take(x, lay.R),
        "S": _take(x, lay.S),
        "U": _take(x, lay.U, np.nan),
        "free": _take(x, lay.F),
    }


def decode(m: MilpInstance, x, *, status: Status = Status.FEASIBLE, bound=None) -> Schedule:
    """Integral schedule from a solution vector of ``m``.

    Missing ``U`` entries (nodes not yet reachable in a frontier stage) are
    filled from the accounting recurrence.
    """
    lay = m.layout
    g = lay.graph
    mats = fractional_matrices(m, x)
    R = np.rint(mats["R"]).astype(np.int8)
    S = np.rint(mats["S"]).astype(np.int8)
    free = np.rint(mats["free"]).astype(np.int8)
    exact = memory_usage(g, R, S, free)
    U = np.where(np.isnan(mats["U"]), exact, mats["U"])
    return Schedule(R, S, U, free, schedule_cost(g, R), status, bound, "milp")


def encode(m: MilpInstance, sched: Schedule) -> np.ndarray:
    """Solution vector of ``m`` realizing an integral schedule (inverse of ``decode``)."""
    lay = m.layout
    x = np.zeros(m.num_vars)
    for idx, arr in ((lay.R, sched.R), (lay.S, sched.S), (lay.F, sched.free)):
        mask = idx >= 0
        x[idx[mask]] = np.asarray(arr, float)[mask]
    U = memory_usage(lay.graph, sched.R, sched.S, sched.free)
    mask = lay.U >= 0
    x[lay.U[mask]] = U[mask]
    return x


def cost_cap_rule(g: CompGraph) -> Fraction:
    """Cost of the plain schedule plus one extra forward pass."""
    fwd = sum((v.cost for v in g.nodes if v.is_forward), Fraction(0))
    bwd = sum((v.cost for v in g.nodes if not v.is_forward), Fraction(0))
    return 2 * fwd + bwd


@dataclass
class BatchSearchResult:
    batch: int
    schedule: Schedule | None
    probes: dict
    hit_limit: bool = False

    def __iter__(self):
        return iter((self.batch, self.schedule))


def max_batch_search(g: CompGraph, budget, cost_cap=None, *, opts=None,
                     max_batch: int = 1 << 16, feasible=None) -> BatchSearchResult:
    """Largest batch size whose scaled problem admits a schedule under the cost cap.

    ``cost_cap`` defaults to :func:`cost_cap_rule`; pass ``math.inf`` for no
    cap. Exponential probing ``1, 2, 4, ...`` followed by bisection. ``feasible``
    may replace the MILP feasibility probe (it receives the scaled graph and
    returns a schedule or None). A probe that times out without an incumbent
    counts as infeasible, so the result is then a lower bound.
    """
    from .costmodel import scale_memory
    from .solver import SolveOptions, solve_milp

    cap = cost_cap_rule(g) if cost_cap is None else cost_cap
    cap = None if cap == INF else cap
    opts = opts or SolveOptions()
    hit_limit = False
    probes = {}

    def probe(B):
        nonlocal hit_limit
        if B in probes:
            return probes[B]
        gb = scale_memory(g, B)
        if feasible is not None:
            res = feasible(gb)
        else:
            try:
                res = solve_milp(build(RematProblem(gb, budget, cost_cap=cap)), opts)
            except InfeasibleError:
                res = None
            except SolverTimeout:
                hit_limit = True
                res = None
        probes[B] = res
        return res

    if probe(1) is None:
        from .sim import minimal_budget_bound

        raise InfeasibleError(
            f"batch size 1 does not fit in budget {budget}; at least "
            f"{minimal_budget_bound(g)} bytes are needed"
        )
    lo, hi = 1, None
    B = 2
    while B <= max_batch:
        if probe(B) is None:
            hi = B
            break
        lo = B
        B *= 2
    if hi is None:
        return BatchSearchResult(lo, probes[lo], probes, hit_limit=True)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if probe(mid) is None:
            hi = mid
        else:
            lo = mid
    return BatchSearchResult(lo, probes[lo], probes, hit_limit)
