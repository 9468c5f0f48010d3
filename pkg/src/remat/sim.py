"""Independent plan interpreter and a brute-force optimal-cost oracle.

Memory is sampled right after an output is allocated and before any
deallocation that follows it, the same instant at which the formulation
measures ``U``.
"""
from __future__ import annotations

import csv
import heapq
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import InfeasibleError, RematError
from .graph import CompGraph
from .plan import Compute, Deallocate, ExecutionPlan


class SimulationError(RematError, ValueError):
    def __init__(self, index: int, message: str):
        super().__init__(f"statement {index}: {message}")
        self.index = index


class StateLimitExceeded(RematError):
    pass


@dataclass
class SimReport:
    peak_mem: int
    total_cost: Fraction
    feasible: bool
    trace: list = field(repr=False, default_factory=list)
    budget: object = math.inf
    terminal_computed: bool = False

    def trace_csv(self, g: CompGraph, plan: ExecutionPlan) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "statement", "resident_bytes"])
        for idx, (s, mem) in enumerate(zip(plan.statements, self.trace)):
            if isinstance(s, Compute):
                text = f"%{s.register} = compute {g.nodes[s.node].name}"
            else:
                text = f"deallocate %{s.register}"
            w.writerow([idx, text, mem])
        return buf.getvalue()


def simulate(g: CompGraph, plan: ExecutionPlan, budget=math.inf) -> SimReport:
    """Replay ``plan`` and measure its peak memory and total cost.

    Raises SimulationError on use of a non-resident value, double free or an
    unknown register.
    """
    live = {}  # register -> node
    resident_nodes = {}  # node -> count of live registers holding it
    mem = g.constant_overhead
    peak = mem
    cost = Fraction(0)
    trace = []
    defined = set()
    done = False
    for idx, s in enumerate(plan.statements):
        if isinstance(s, Compute):
            v = s.node
            if not 0 <= v < g.n:
                raise SimulationError(idx, f"unknown node {v}")
            if s.register in defined:
                raise SimulationError(idx, f"register %{s.register} assigned twice")
            deps = g.deps[v]
            if s.args:
                if len(s.args) != len(deps):
                    raise SimulationError(idx, f"{g.nodes[v].name} expects {len(deps)} operands")
                for d, a in zip(deps, s.args):
                    if a not in live:
                        raise SimulationError(idx, f"operand %{a} of {g.nodes[v].name} is not resident")
                    if live[a] != d:
                        raise SimulationError(idx, f"operand %{a} holds {g.nodes[live[a]].name}, expected {g.nodes[d].name}")
            else:
                for d in deps:
                    if not resident_nodes.get(d):
                        raise SimulationError(idx, f"{g.nodes[v].name} needs {g.nodes[d].name}, which is not resident")
            defined.add(s.register)
            live[s.register] = v
            resident_nodes[v] = resident_nodes.get(v, 0) + 1
            mem += g.nodes[v].mem
            cost += g.nodes[v].cost
            peak = max(peak, mem)
            if v == g.terminal:
                done = True
        elif isinstance(s, Deallocate):
            if s.register not in live:
                what = "double free of" if s.register in defined else "unknown register"
                raise SimulationError(idx, f"{what} %{s.register}")
            v = live.pop(s.register)
            resident_nodes[v] -= 1
            mem -= g.nodes[v].mem
        else:
            raise SimulationError(idx, f"unknown statement {s!r}")
        trace.append(mem)
    return SimReport(peak, cost, peak <= budget, trace, budget, done)


# oracle ---------------------------------------------------------------------

def minimal_budget_bound(g: CompGraph) -> int:
    """Memory needed by any schedule: each node together with its operands."""
    m = g.mems
    return g.constant_overhead + max(m[k] + sum(m[i] for i in g.deps[k]) for k in range(g.n))


@dataclass
class OracleResult:
    cost: Fraction
    plan: ExecutionPlan
    states: int


def oracle_optimal(g: CompGraph, budget, *, max_nodes: int = 9, max_states: int = 2_000_000) -> OracleResult:
    """Cheapest way to evaluate the terminal node within ``budget``.

    Uniform-cost search over resident sets. A move either computes a node
    whose operands are resident (peak checked after allocation) or frees a
    resident value at no cost. Any evaluation order is allowed.
    """
    n = g.n
    if n > max_nodes:
        raise StateLimitExceeded(f"oracle limited to {max_nodes} nodes, graph has {n}")
    mem = g.mems
    cost = g.costs
    dep_mask = [sum(1 << i for i in g.deps[k]) for k in range(n)]
    term = g.terminal
    base = g.constant_overhead
    if base > budget:
        raise InfeasibleError("budget below constant overhead")

    def used(mask):
        total = base
        i = 0
        while mask:
            if mask & 1:
                total += mem[i]
            mask >>= 1
            i += 1
        return total

    best = {0: Fraction(0)}
    parent = {0: None}
    heap = [(Fraction(0), 0)]
    seen = 0
    while heap:
        c, mask = heapq.heappop(heap)
        if c > best.get(mask, math.inf):
            continue
        seen += 1
        if seen > max_states:
            raise StateLimitExceeded("oracle state limit exceeded")
        u = used(mask)
        for k in range(n):
            bit = 1 << k
            if mask & bit or (mask & dep_mask[k]) != dep_mask[k]:
                continue
            if u + mem[k] > budget:
                continue
            nc = c + cost[k]
            if k == term:
                moves = _replay(parent, mask) + [("compute", k)]
                return OracleResult(nc, _moves_to_plan(g, moves), seen)
            nm = mask | bit
            if nc < best.get(nm, math.inf):
                best[nm] = nc
                parent[nm] = (mask, ("compute", k))
                heapq.heappush(heap, (nc, nm))
        for k in range(n):
            bit = 1 << k
            if mask & bit:
                nm = mask & ~bit
                if c < best.get(nm, math.inf):
                    best[nm] = c
                    parent[nm] = (mask, ("free", k))
                    heapq.heappush(heap, (c, nm))
    raise InfeasibleError(f"no schedule fits in budget {budget}")


def _replay(parent, mask):
    moves = []
    while parent[mask] is not None:
        prev, mv = parent[mask]
        moves.append(mv)
        mask = prev
    return moves[::-1]


def _moves_to_plan(g, moves) -> ExecutionPlan:
    regs = {}
    stmts = []
    r = 0
    for op, k in moves:
        if op == "compute":
            stmts.append(Compute(k, r, tuple(regs[d] for d in g.deps[k])))
            regs[k] = r
            r += 1
        else:
            stmts.append(Deallocate(regs.pop(k)))
    return ExecutionPlan(tuple(stmts), r)


def oracle_min_budget(g: CompGraph, **kw) -> int:
    """Smallest integer budget at which the oracle finds a schedule (bisection)."""
    lo = minimal_budget_bound(g)
    hi = g.constant_overhead + sum(g.mems)
    try:
        oracle_optimal(g, lo, **kw)
        return lo
    except InfeasibleError:
        pass
    while hi - lo > 1:
        mid = (lo + hi) // 2
        try:
            oracle_optimal(g, mid, **kw)
            hi = mid
        except InfeasibleError:
            lo = mid
    return hi
