"""Checkpointing heuristics expressed as fixed checkpoint policies.

Each heuristic picks a set of forward values to keep; the set is turned into
a checkpoint matrix ``S`` and completed with the cheapest compute matrix
``R`` (:func:`optimal_r_given_s`).

Positions in the docstrings below are 1-based along the candidate chain;
returned node indices are 0-based.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np

from .approx import repair
from .errors import InfeasibleError
from .graph import CompGraph, GraphError, articulation_points
from .schedule import Schedule, from_rs

STRATEGIES = ("checkpoint-all", "chen-sqrt", "chen-greedy", "griewank",
              "ap-sqrt", "ap-greedy", "lin-sqrt", "lin-greedy")


@dataclass(frozen=True)
class CheckpointSet:
    kept: frozenset
    source: str

    def __post_init__(self):
        object.__setattr__(self, "kept", frozenset(int(k) for k in self.kept))

    def sorted(self) -> list:
        return sorted(self.kept)


# candidate chains ------------------------------------------------------------

def _is_forward_path(g: CompGraph) -> bool:
    F = g.forward_count
    return sorted(g.forward_edges()) == [(i, i + 1) for i in range(F - 1)]


def _require_path(g: CompGraph):
    if not _is_forward_path(g):
        raise GraphError("heuristic needs a linear forward pass; use the ap-/lin- variants")


def _sqrt_pick(cands: list) -> list:
    L = len(cands)
    if L <= 1:
        return []
    seg = math.isqrt(L - 1) + 1  # ceil(sqrt(L))
    return [cands[p - 1] for p in range(seg, L, seg)]


def _greedy_pick(g: CompGraph, cands: list, b) -> list:
    if not b > 0:
        raise ValueError("segment size b must be positive")
    is_cand = set(cands)
    last = cands[-1] if cands else None
    kept, acc = [], 0
    for v in range(g.forward_count):
        acc += g.nodes[v].mem
        if v in is_cand and acc >= b and v != last:
            kept.append(v)
            acc = 0
    return kept


def chen_sqrt(g: CompGraph) -> CheckpointSet:
    """Every ``ceil(sqrt(L))``-th forward node, the last one excluded."""
    _require_path(g)
    return CheckpointSet(_sqrt_pick(list(range(g.forward_count))), "chen-sqrt")


def chen_greedy(g: CompGraph, b) -> CheckpointSet:
    """Walk the forward chain summing memory; keep a node once the running
    sum reaches ``b`` and restart the sum. The last node is never kept."""
    _require_path(g)
    return CheckpointSet(_greedy_pick(g, list(range(g.forward_count)), b), "chen-greedy")


def _ap_candidates(g: CompGraph) -> list:
    F = g.forward_count
    return sorted(set(articulation_points(g)) | {0, F - 1})


def ap_generalize(g: CompGraph, inner: str = "sqrt", b=None) -> CheckpointSet:
    """Inner heuristic restricted to articulation points of the forward graph
    (plus its two ends, so that a path yields every node)."""
    cands = _ap_candidates(g)
    if inner == "sqrt":
        return CheckpointSet(_sqrt_pick(cands), "ap-sqrt")
    if inner == "greedy":
        return CheckpointSet(_greedy_pick(g, cands, b), "ap-greedy")
    raise ValueError(f"unknown inner heuristic {inner!r}")


def linearized_generalize(g: CompGraph, inner: str = "sqrt", b=None) -> CheckpointSet:
    """Inner heuristic on the forward nodes taken as a chain in topological order.

    Node numbering is shared with the original graph, so indices map back
    unchanged; schedules are always completed on the original edges.
    """
    cands = list(range(g.forward_count))
    if inner == "sqrt":
        return CheckpointSet(_sqrt_pick(cands), "lin-sqrt")
    if inner == "greedy":
        return CheckpointSet(_greedy_pick(g, cands, b), "lin-greedy")
    raise ValueError(f"unknown inner heuristic {inner!r}")


# schedules -------------------------------------------------------------------

def checkpoint_matrix(g: CompGraph, cps: CheckpointSet | set, *, taken: dict | None = None,
                      segments: bool = False) -> np.ndarray:
    """Frontier checkpoint matrix realizing a checkpoint set.

    Kept values, the last forward value and every backward value stay
    resident from the stage after they are first computed through the stage
    of their last consumer. Other forward values stay resident only until
    their last forward consumer has run. ``taken`` may delay the start of
    retention for a kept value (stage index after which it is held).

    With ``segments`` the forward nodes between consecutive checkpoints (in
    index order) form a segment that is recomputed once, in the first stage
    whose gradient needs any of it, and then held until its last consumer.
    """
    kept = cps.kept if isinstance(cps, CheckpointSet) else frozenset(cps)
    n, F = g.n, g.forward_count
    bad = [k for k in kept if not 0 <= k < F]
    if bad:
        raise GraphError(f"checkpoints must be forward nodes, got {bad}")
    reload = {}
    if segments:
        seg = np.cumsum([1 if i in kept else 0 for i in range(F)])
        first = {}
        for i in range(F - 1):
            if i in kept:
                continue
            bwd = [j for j in g.users[i] if j >= F]
            if bwd:
                first[seg[i]] = min(first.get(seg[i], n), min(bwd))
        reload = {i: first[seg[i]] for i in range(F - 1) if i not in kept and seg[i] in first}
    S = np.zeros((n, n), dtype=np.int8)
    for i in range(n):
        users = g.users[i]
        if not users:
            continue
        if i in kept or i >= F - 1:
            end = max(users)
        else:
            fwd = [j for j in users if j < F]
            if fwd:
                S[i + 1:max(fwd) + 1, i] = 1
            if i in reload:
                S[reload[i] + 1:max(users) + 1, i] = 1
            continue
        start = i + 1
        if taken and i in taken:
            start = max(start, taken[i] + 1)
        S[start:end + 1, i] = 1
    return S


def optimal_r_given_s(g: CompGraph, S, *, source: str = "given-s") -> Schedule:
    """Cheapest compute matrix for a fixed checkpoint matrix.

    Retention gaps in ``S`` are closed by computing the value in the previous
    stage; every stage then recomputes exactly the missing ancestors of what
    it must evaluate.
    """
    S = np.asarray(S, dtype=np.int8)
    if S[0].any():
        raise InfeasibleError("checkpoint matrix keeps values before anything was computed")
    R = repair(g, S)
    return from_rs(g, R, S, source=source)


def checkpoint_all(g: CompGraph) -> Schedule:
    """Every node once; every value kept until its last consumer."""
    S = checkpoint_matrix(g, set(range(g.forward_count)))
    return optimal_r_given_s(g, S, source="checkpoint-all")


def schedule_from_checkpoints(g: CompGraph, cps: CheckpointSet) -> Schedule:
    """Segment-wise recomputation schedule for a checkpoint set."""
    return optimal_r_given_s(g, checkpoint_matrix(g, cps, segments=True), source=cps.source)


# binomial checkpointing --------------------------------------------------------

@lru_cache(maxsize=None)
def revolve_cost(l: int, c: int) -> int:
    """Fewest forward steps to reverse ``l`` steps with ``c`` snapshot slots
    (the slot holding the start state included), by dynamic programming."""
    if l < 1:
        raise ValueError("l must be >= 1")
    if l == 1:
        return 0
    if c < 1:
        return math.inf
    if c == 1:
        return l * (l - 1) // 2
    return min(j + revolve_cost(l - j, c - 1) + revolve_cost(j, c) for j in range(1, l))


def revolve_closed_form(l: int, c: int) -> int:
    """Closed form ``r*l - C(c+r, c+1)`` with ``r`` the least integer such
    that ``C(c+r, c) >= l``."""
    if c < 1 and l > 1:
        return math.inf
    if l == 1:
        return 0
    r = 0
    while comb(c + r, c) < l:
        r += 1
    return r * l - comb(c + r, c + 1)


@lru_cache(maxsize=None)
def _revolve_split(l: int, c: int) -> int:
    best, arg = math.inf, 1
    for j in range(1, l):
        v = j + revolve_cost(l - j, c - 1) + revolve_cost(j, c)
        if v < best:
            best, arg = v, j
    return arg


@dataclass
class RevolveResult:
    actions: list
    forward_steps: int
    snapshots: CheckpointSet
    taken_before: dict  # snapshot state -> adjoint step it precedes (None: first sweep)
    max_slots: int


def griewank_revolve(L: int, c: int) -> RevolveResult:
    """Binomial checkpointing of an ``L``-step chain with ``c`` slots.

    States are ``0..L``; step ``s`` maps state ``s-1`` to ``s`` and its
    adjoint needs state ``s-1``. State 0 occupies one slot throughout.
    Actions are ``("advance", a, b)``, ``("snapshot", j)``,
    ``("adjoint", s)`` and ``("release", j)``.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if c < 1:
        raise ValueError("need at least one checkpoint slot")
    actions = []
    taken = {0: None}
    live = {0}
    peak = 1
    steps = 0

    def rev(a, l, c):
        # state a sits in a slot; reverse steps a+1..a+l
        nonlocal peak, steps
        if l == 1:
            actions.append(("adjoint", a + 1))
            return
        if c == 1:
            for s in range(a + l, a, -1):
                if s - 1 > a:
                    actions.append(("advance", a, s - 1))
                    steps += s - 1 - a
                actions.append(("adjoint", s))
            return
        j = _revolve_split(l, c)
        actions.append(("advance", a, a + j))
        steps += j
        actions.append(("snapshot", a + j))
        first_sweep = not any(act[0] == "adjoint" for act in actions)
        taken[a + j] = None if first_sweep else a + l
        live.add(a + j)
        peak = max(peak, len(live))
        rev(a + j, l - j, c - 1)
        actions.append(("release", a + j))
        live.discard(a + j)
        rev(a, j, c)

    rev(0, L, c)
    if steps != revolve_cost(L, c):
        raise AssertionError("revolve trace disagrees with its recurrence")
    return RevolveResult(actions, steps, CheckpointSet(taken, "griewank"), taken, peak)


def griewank_schedule(g: CompGraph, c: int) -> Schedule:
    """Revolve on the forward chain of a training graph, as a staged schedule.

    Snapshot ``j`` is held from the stage in which revolve takes it (its
    first computation for snapshots of the initial sweep, otherwise the stage
    of the adjoint it precedes) through the stage of its last consumer.
    """
    _require_path(g)
    F = g.forward_count
    if F >= g.n:
        raise GraphError("revolve needs a graph with a backward pass")
    L = F - 1
    res = griewank_revolve(L, c)
    # adjoint of step s runs in the stage of the last consumer of state s-1
    adj_stage = {s: max(g.users[s - 1]) for s in range(1, L + 1)}
    taken = {j: (j if a is None else adj_stage[a]) for j, a in res.taken_before.items()}
    S = checkpoint_matrix(g, res.snapshots, taken=taken)
    return optimal_r_given_s(g, S, source="griewank")


# strategy registry ---------------------------------------------------------------

def strategy_schedules(g: CompGraph, strategy: str) -> list:
    """All schedules a strategy can produce on ``g`` (one per hyperparameter).

    ``chen-*`` and ``griewank`` require a linear forward pass and return an
    empty list otherwise. Greedy variants sweep ``b`` over every distinct
    prefix-memory value; revolve sweeps the slot count.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {', '.join(STRATEGIES)}")
    linear = _is_forward_path(g)
    if strategy == "checkpoint-all":
        return [checkpoint_all(g)]
    if strategy.startswith("chen-") and not linear:
        return []
    if strategy == "griewank":
        if not linear or g.forward_count >= g.n:
            return []
        out = [griewank_schedule(g, c) for c in range(1, g.forward_count + 1)]
        return out
    kind, inner = strategy.split("-")
    if inner == "sqrt":
        pick = {"chen": lambda: chen_sqrt(g), "ap": lambda: ap_generalize(g, "sqrt"),
                "lin": lambda: linearized_generalize(g, "sqrt")}[kind]
        return [schedule_from_checkpoints(g, pick())]
    total = sum(g.nodes[v].mem for v in range(g.forward_count))
    bs = sorted({b for b in _prefix_sums(g)} | {total + 1})
    seen, out = set(), []
    for b in bs:
        if b <= 0:
            continue
        cps = {"chen": lambda: chen_greedy(g, b), "ap": lambda: ap_generalize(g, "greedy", b),
               "lin": lambda: linearized_generalize(g, "greedy", b)}[kind]()
        if cps.kept in seen:
            continue
        seen.add(cps.kept)
        out.append(schedule_from_checkpoints(g, cps))
    return out


def _prefix_sums(g: CompGraph):
    acc = 0
    for v in range(g.forward_count):
        acc += g.nodes[v].mem
        yield acc


def baseline_schedule(g: CompGraph, strategy: str, **params) -> Schedule:
    """Single schedule for a strategy with explicit hyperparameters
    (``b`` for greedy variants, ``slots`` for griewank)."""
    if strategy == "checkpoint-all":
        return checkpoint_all(g)
    if strategy == "chen-sqrt":
        return schedule_from_checkpoints(g, chen_sqrt(g))
    if strategy == "chen-greedy":
        return schedule_from_checkpoints(g, chen_greedy(g, params["b"]))
    if strategy == "griewank":
        return griewank_schedule(g, params["slots"])
    if strategy in ("ap-sqrt", "lin-sqrt"):
        fn = ap_generalize if strategy.startswith("ap") else linearized_generalize
        return schedule_from_checkpoints(g, fn(g, "sqrt"))
    if strategy in ("ap-greedy", "lin-greedy"):
        fn = ap_generalize if strategy.startswith("ap") else linearized_generalize
        return schedule_from_checkpoints(g, fn(g, "greedy", params["b"]))
    raise ValueError(f"unknown strategy {strategy!r}")
