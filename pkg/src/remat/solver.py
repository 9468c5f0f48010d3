"""LP relaxation and branch-and-bound for :class:`MilpInstance`.

Two exact backends are available. ``"highs"`` (the default) hands the whole
instance to the HiGHS MIP solver through :func:`scipy.optimize.milp`.
``"bnb"`` is a self-contained branch-and-bound over HiGHS LPs
(:func:`scipy.optimize.linprog`): best-first on the LP bound with depth-first
dives toward the rounded direction, branching on the most fractional
``R``/``S`` column first (ties go to the lowest column, i.e. the lowest stage
then node).

Tolerances: rows are feasible within ``1e-6``; a value is integral when it is
within ``1e-5`` of an integer.
"""
from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from .errors import InfeasibleError, NumericalError, SolverTimeout
from .formulation import MilpInstance, decode
from .mps import export_mps, read_mps  # noqa: F401  (MPS I/O is part of the solver interface)
from .schedule import Schedule, Status

log = logging.getLogger(__name__)

FEAS_TOL = 1e-6
INT_TOL = 1e-5


@dataclass(frozen=True)
class SolveOptions:
    time_limit: float = 60.0
    gap_tolerance: float = 1e-6
    seed: int = 0
    threads: int = 1
    node_limit: int | None = None
    log_every: int = 50
    root_heuristic: bool = True
    backend: str = "highs"

    def __post_init__(self):
        if self.backend not in ("highs", "bnb"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if not self.time_limit > 0:
            raise ValueError("time_limit must be positive")
        if self.gap_tolerance < 0:
            raise ValueError("gap_tolerance must be nonnegative")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class LpSolution:
    x: np.ndarray
    objective: float
    status: Status
    names: tuple = field(repr=False, default=())
    iterations: int = 0

    @cached_property
    def values(self) -> dict:
        return dict(zip(self.names, self.x.tolist()))


class _LpCore:
    """Row data split into the ``A_ub x <= b_ub`` / ``A_eq x = b_eq`` form."""

    def __init__(self, m: MilpInstance):
        A = m.A.tocsr()
        s = m.senses
        le, ge, eq = s == "L", s == "G", s == "E"
        self.A_ub = sp.vstack([A[le], -A[ge]]).tocsr()
        self.b_ub = np.concatenate([m.rhs[le], -m.rhs[ge]])
        self.A_eq = A[eq].tocsr()
        self.b_eq = m.rhs[eq]
        self.c = m.c
        self.lp_iters = 0

    def solve(self, lb, ub):
        kw = {}
        if self.A_ub.shape[0]:
            kw.update(A_ub=self.A_ub, b_ub=self.b_ub)
        if self.A_eq.shape[0]:
            kw.update(A_eq=self.A_eq, b_eq=self.b_eq)
        ub = np.where(np.isinf(ub), None, ub)
        res = linprog(self.c, bounds=list(zip(lb, ub)), method="highs", **kw)
        self.lp_iters += int(getattr(res, "nit", 0) or 0)
        if res.status == 2:
            return None
        if res.status == 3:
            raise NumericalError("LP relaxation is unbounded")
        if res.status != 0:
            raise NumericalError(f"LP solve failed: {res.message}")
        return res.x, float(res.fun)


def solve_lp(m: MilpInstance) -> LpSolution:
    """Optimal solution of the continuous relaxation of ``m``.

    The objective is a lower bound on every integral solution.
    """
    core = _LpCore(m)
    out = core.solve(m.lb, m.ub)
    if out is None:
        raise InfeasibleError("LP relaxation is infeasible")
    x, obj = out
    return LpSolution(x, obj, Status.OPTIMAL, m.var_names, core.lp_iters)


@dataclass
class MipResult:
    x: np.ndarray | None
    objective: float
    bound: float
    status: Status
    nodes: int
    elapsed: float

    @property
    def gap(self) -> float:
        if self.x is None:
            return math.inf
        return (self.objective - self.bound) / max(abs(self.objective), 1e-9)


@dataclass(order=True)
class _Node:
    key: float
    seq: int
    depth: int = field(compare=False)
    lb: np.ndarray = field(compare=False, repr=False)
    ub: np.ndarray = field(compare=False, repr=False)
    x: np.ndarray = field(compare=False, repr=False)
    obj: float = field(compare=False)


def _branch_priority(m: MilpInstance) -> np.ndarray:
    pri = np.ones(m.num_vars, dtype=np.int8)
    lay = m.layout
    if lay is not None:
        for idx in (lay.R, lay.S):
            pri[idx[idx >= 0]] = 0
    return pri


def branch_and_bound(m: MilpInstance, opts: SolveOptions = SolveOptions(), *,
                     incumbent: np.ndarray | None = None, heuristic=None) -> MipResult:
    """Minimize ``m`` over its integrality marks.

    ``incumbent`` seeds a known feasible point; ``heuristic(x_lp)`` may return
    a candidate feasible point built from the root relaxation.
    """
    start = time.monotonic()
    core = _LpCore(m)
    ints = np.flatnonzero(m.integer)
    pri = _branch_priority(m)
    cont_cost = np.any(m.c[~m.integer] != 0)
    int_obj = (not cont_cost) and np.all(np.abs(m.c - np.rint(m.c)) < 1e-12)

    def node_bound(obj):
        return math.ceil(obj - 1e-6) if int_obj else obj

    best_x, best_obj = None, math.inf

    def accept(x):
        nonlocal best_x, best_obj
        if x is None:
            return False
        x = np.asarray(x, float)
        if m.violations(x, FEAS_TOL):
            return False
        if np.any(np.abs(x[ints] - np.rint(x[ints])) > INT_TOL):
            return False
        obj = m.objective(x)
        if obj < best_obj - 1e-9:
            best_x, best_obj = x, obj
            return True
        return False

    def polish(x, lb, ub):
        # fix integers to their rounded values; re-solve for the continuous part
        lb2, ub2 = lb.copy(), ub.copy()
        r = np.rint(x[ints])
        lb2[ints] = r
        ub2[ints] = r
        out = core.solve(lb2, ub2)
        return None if out is None else out[0]

    if incumbent is not None:
        accept(incumbent)

    def timed_out():
        return time.monotonic() - start > opts.time_limit

    root = core.solve(m.lb.copy(), m.ub.copy())
    if root is None:
        raise InfeasibleError("problem is infeasible (root relaxation)")
    x0, obj0 = root
    if heuristic is not None:
        accept(heuristic(x0))

    heap = []
    seq = 0
    nodes = 0

    def push(lb, ub, x, obj, depth):
        nonlocal seq
        heapq.heappush(heap, _Node(node_bound(obj), seq, depth, lb, ub, x, obj))
        seq += 1

    def pick(x):
        frac = np.abs(x[ints] - np.rint(x[ints]))
        cand = frac > INT_TOL
        if not cand.any():
            return None
        dist = np.minimum(x[ints] - np.floor(x[ints]), np.ceil(x[ints]) - x[ints])
        order = np.lexsort((ints, -np.round(dist, 9), pri[ints]))
        for o in order:
            if cand[o]:
                return ints[o]
        return None

    def prunable(bound):
        if best_x is None:
            return False
        if int_obj:
            return bound >= best_obj - 1e-9
        return bound >= best_obj - max(1e-9, opts.gap_tolerance * abs(best_obj))

    push(m.lb.copy(), m.ub.copy(), x0, obj0, 0)
    status = None
    while heap:
        if timed_out() or (opts.node_limit is not None and nodes >= opts.node_limit):
            status = Status.TIME_LIMIT if timed_out() else Status.FEASIBLE
            break
        node = heapq.heappop(heap)
        if prunable(node.key):
            continue
        if best_x is not None:
            gap = (best_obj - node.key) / max(abs(best_obj), 1e-9)
            if gap <= opts.gap_tolerance:
                heapq.heappush(heap, node)
                break
        # depth-first dive from this node
        cur = node
        while cur is not None:
            nodes += 1
            if opts.log_every and nodes % opts.log_every == 0:
                lo = min([cur.key] + [h.key for h in heap[:1]])
                log.info("iter=%d nodes=%d bound=%.6g incumbent=%.6g gap=%.4g",
                         core.lp_iters, nodes, lo, best_obj,
                         (best_obj - lo) / max(abs(best_obj), 1e-9) if best_x is not None else math.inf)
            j = pick(cur.x)
            if j is None:
                if not accept(cur.x):
                    accept(polish(cur.x, cur.lb, cur.ub))
                break
            v = cur.x[j]
            children = []
            for direction in ("down", "up"):
                lb, ub = cur.lb.copy(), cur.ub.copy()
                if direction == "down":
                    ub[j] = math.floor(v)
                else:
                    lb[j] = math.ceil(v)
                if timed_out():
                    break
                out = core.solve(lb, ub)
                if out is None:
                    continue
                xc, oc = out
                if prunable(node_bound(oc)):
                    continue
                children.append((direction, lb, ub, xc, oc))
            prefer = "up" if v - math.floor(v) >= 0.5 else "down"
            nxt = None
            for direction, lb, ub, xc, oc in children:
                if direction == prefer and nxt is None:
                    nxt = _Node(node_bound(oc), -1, cur.depth + 1, lb, ub, xc, oc)
                else:
                    push(lb, ub, xc, oc, cur.depth + 1)
            cur = nxt
            if timed_out():
                break
    open_bounds = [h.key for h in heap if not prunable(h.key)]
    if status is None:
        status = Status.OPTIMAL
    if best_x is None:
        elapsed = time.monotonic() - start
        if status == Status.OPTIMAL:
            raise InfeasibleError("problem is infeasible")
        raise SolverTimeout(f"no feasible solution within {opts.time_limit}s ({nodes} nodes)")
    bound = min(open_bounds) if open_bounds else best_obj
    bound = min(bound, best_obj)
    if status != Status.OPTIMAL:
        gap = (best_obj - bound) / max(abs(best_obj), 1e-9)
        if gap <= opts.gap_tolerance:
            status = Status.OPTIMAL
    elapsed = time.monotonic() - start
    log.info("done status=%s nodes=%d bound=%.6g incumbent=%.6g elapsed=%.2fs",
             status.value, nodes, bound, best_obj, elapsed)
    return MipResult(best_x, best_obj, float(bound), status, nodes, elapsed)


def highs_milp(m: MilpInstance, opts: SolveOptions = SolveOptions()) -> MipResult:
    """Solve ``m`` with the HiGHS MIP solver."""
    start = time.monotonic()
    s = m.senses
    lo = np.where(s == "L", -np.inf, m.rhs)
    hi = np.where(s == "G", np.inf, m.rhs)
    # HiGHS presolve (scipy 1.15) returns wrong optima on some of these instances
    options = {"time_limit": float(opts.time_limit), "mip_rel_gap": float(opts.gap_tolerance),
               "disp": log.isEnabledFor(logging.DEBUG), "presolve": False}
    if opts.node_limit is not None:
        options["node_limit"] = int(opts.node_limit)
    cons = [LinearConstraint(m.A, lo, hi)] if m.num_rows else []
    res = milp(m.c, constraints=cons, integrality=m.integer.astype(np.uint8),
               bounds=Bounds(m.lb, m.ub), options=options)
    elapsed = time.monotonic() - start
    if res.status == 2:
        raise InfeasibleError("problem is infeasible")
    if res.status == 3:
        raise NumericalError("problem is unbounded")
    if res.x is None:
        if res.status == 1:
            raise SolverTimeout(f"no feasible solution within {opts.time_limit}s")
        raise NumericalError(f"MIP solve failed: {res.message}")
    x = np.asarray(res.x, float)
    x[m.integer] = np.rint(x[m.integer])
    obj = m.objective(x)
    bound = getattr(res, "mip_dual_bound", None)
    bound = obj if bound is None or not np.isfinite(bound) else min(float(bound), obj)
    if res.status == 0:
        status = Status.OPTIMAL
    else:
        status = Status.TIME_LIMIT if elapsed >= opts.time_limit * 0.99 else Status.FEASIBLE
    log.info("done status=%s nodes=%s bound=%.6g incumbent=%.6g elapsed=%.2fs",
             status.value, getattr(res, "mip_node_count", 0), bound, obj, elapsed)
    return MipResult(x, obj, bound, status, int(getattr(res, "mip_node_count", 0) or 0), elapsed)


def _rounding_heuristic(m: MilpInstance):
    lay = m.layout
    if lay is None or not lay.frontier:
        return None
    from .approx import two_phase_round
    from .formulation import encode, fractional_matrices

    def run(x):
        mats = fractional_matrices(m, x)
        sched = two_phase_round(mats["S"], lay.graph)
        return encode(m, sched)

    return run


def solve_milp(m: MilpInstance, opts: SolveOptions = SolveOptions()) -> Schedule:
    """Integral schedule minimizing the recomputation cost of ``m``.

    Raises InfeasibleError when infeasibility is proven and SolverTimeout when
    the time limit expires without an incumbent.
    """
    if m.layout is None:
        raise ValueError("solve_milp needs an instance built from a RematProblem; use branch_and_bound")
    if opts.backend == "highs":
        res = highs_milp(m, opts)
    else:
        heur = _rounding_heuristic(m) if opts.root_heuristic else None
        res = branch_and_bound(m, opts, heuristic=heur)
    sched = decode(m, res.x, status=res.status, bound=res.bound)
    sched.source = "ilp"
    return sched
