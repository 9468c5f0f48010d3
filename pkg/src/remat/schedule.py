"""Schedules: the (R, S, U, Free) matrices and their exact evaluation.

Indices are 0-based: ``R[t, i] == 1`` means node ``i`` is computed in stage
``t``; ``S[t, i] == 1`` means the value of node ``i`` is resident at the
start of stage ``t``. ``U[t, 0]`` is the memory at the start of stage ``t``
and ``U[t, k + 1]`` the memory right after node ``k`` is evaluated, before its
dependencies are freed. ``free[t, e]`` is the deallocation indicator for edge
``e = (i, k)``: value ``i`` is freed in stage ``t`` right after ``k``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .graph import CompGraph


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    TIME_LIMIT = "time_limit"
    INFEASIBLE = "infeasible"


@dataclass
class Schedule:
    R: np.ndarray
    S: np.ndarray
    U: np.ndarray
    free: np.ndarray
    objective: Fraction
    status: Status = Status.FEASIBLE
    bound: float | None = None
    source: str = ""

    @property
    def stages(self) -> int:
        return self.R.shape[0]

    @property
    def gap(self) -> float | None:
        if self.bound is None:
            return None
        obj = float(self.objective)
        return (obj - self.bound) / max(abs(obj), 1e-9)

    @property
    def peak_accounted(self) -> int:
        """Largest entry of ``U`` (the solver-side memory accounting)."""
        return int(np.max(self.U))

    def same_decisions(self, other: "Schedule") -> bool:
        return (
            np.array_equal(self.R, other.R)
            and np.array_equal(self.S, other.S)
            and np.array_equal(self.free, other.free)
        )


def last_stage_boundary(S: np.ndarray) -> np.ndarray:
    """``S`` with an extra all-zero row: nothing is retained past the horizon."""
    return np.vstack([S, np.zeros((1, S.shape[1]), dtype=S.dtype)])


def num_hazards(g: CompGraph, R: np.ndarray, S: np.ndarray, t: int, i: int, k: int) -> int:
    """Number of zero factors in the deallocation product for edge ``(i, k)`` at stage ``t``."""
    if (i, k) not in g.edge_index:
        raise IndexError(f"({i}, {k}) is not an edge")
    T = R.shape[0]
    if not 0 <= t < T:
        raise IndexError(f"stage {t} out of range")
    s_next = int(S[t + 1, i]) if t + 1 < T else 0
    later = sum(int(R[t, j]) for j in g.users[i] if j > k)
    return (1 - int(R[t, k])) + s_next + later


def free_from_product(g: CompGraph, R: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Deallocation indicators from the product of keep-alive factors."""
    T = R.shape[0]
    Sx = last_stage_boundary(S)
    out = np.zeros((T, len(g.edges)), dtype=np.int8)
    for e, (i, k) in enumerate(g.edges):
        later = [j for j in g.users[i] if j > k]
        for t in range(T):
            if not R[t, k] or Sx[t + 1, i]:
                continue
            if any(R[t, j] for j in later):
                continue
            out[t, e] = 1
    return out


def memory_usage(g: CompGraph, R: np.ndarray, S: np.ndarray, free: np.ndarray) -> np.ndarray:
    """Memory accounting ``U`` from checkpoint, compute and free decisions (exact integers)."""
    T, n = R.shape
    mem = g.mems
    U = np.zeros((T, n + 1), dtype=np.int64)
    dep_edges = [[g.edge_index[(i, k)] for i in g.deps[k]] for k in range(n)]
    for t in range(T):
        u = g.constant_overhead + sum(mem[i] for i in range(n) if S[t, i])
        U[t, 0] = u
        for k in range(n):
            if k > 0:
                prev = k - 1
                u -= sum(mem[g.edges[e][0]] for e in dep_edges[prev] if free[t, e])
            u += mem[k] * int(R[t, k])
            U[t, k + 1] = u
    return U


def schedule_cost(g: CompGraph, R: np.ndarray) -> Fraction:
    costs = g.costs
    counts = np.asarray(R, dtype=np.int64).sum(axis=0)
    return sum((costs[i] * int(counts[i]) for i in range(g.n)), Fraction(0))


def from_rs(g: CompGraph, R, S, *, status: Status = Status.FEASIBLE, source: str = "") -> Schedule:
    """Complete integral ``R``/``S`` into a schedule with Free and U evaluated exactly."""
    R = np.asarray(R, dtype=np.int8)
    S = np.asarray(S, dtype=np.int8)
    free = free_from_product(g, R, S)
    U = memory_usage(g, R, S, free)
    return Schedule(R, S, U, free, schedule_cost(g, R), status, None, source)


def constraint_violations(g: CompGraph, sched: Schedule, *, frontier: bool = True,
                          budget=None) -> list:
    """Human-readable list of violated schedule constraints (empty when valid)."""
    R, S = sched.R, sched.S
    T, n = R.shape
    out = []
    for t in range(T):
        for i, j in g.edges:
            if R[t, j] > R[t, i] + S[t, i]:
                out.append(f"dependency: stage {t} computes {j} without {i}")
    for t in range(1, T):
        for i in range(n):
            if S[t, i] > R[t - 1, i] + S[t - 1, i]:
                out.append(f"retention: stage {t} keeps {i} that was not resident in stage {t - 1}")
    if frontier:
        if T != n:
            out.append("frontier schedules need one stage per node")
        for t in range(min(T, n)):
            if R[t, t] != 1:
                out.append(f"frontier: R[{t},{t}] != 1")
            if S[t, t:].any():
                out.append(f"frontier: S has entries on/above the diagonal in stage {t}")
            if R[t, t + 1:].any():
                out.append(f"frontier: R has entries above the diagonal in stage {t}")
    else:
        if S[0].any():
            out.append("initial checkpoints present")
        if R[:, n - 1].sum() < 1:
            out.append("terminal node never computed")
    for t in range(T):
        for i in range(n):
            total = sum(int(sched.free[t, g.edge_index[(i, k)]]) for k in g.users[i])
            if total > 1:
                out.append(f"double deallocation of {i} in stage {t}")
    if not np.array_equal(sched.free, free_from_product(g, R, S)):
        out.append("free indicators disagree with the deallocation product")
    U = memory_usage(g, R, S, sched.free)
    if np.max(np.abs(U - np.asarray(sched.U, dtype=float))) > 1e-6:
        out.append("memory accounting disagrees with the recurrence")
    if budget is not None and U.max() > budget + 1e-6:
        out.append(f"memory {int(U.max())} exceeds budget {budget}")
    return out
