"""Execution plans: compute/deallocate statements over virtual registers."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np

from .graph import CompGraph
from .schedule import Schedule, constraint_violations, last_stage_boundary


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class Compute:
    node: int
    register: int
    args: tuple = ()


@dataclass(frozen=True)
class Deallocate:
    register: int


@dataclass(frozen=True)
class ExecutionPlan:
    statements: tuple
    register_count: int
    stage_starts: tuple = ()

    def __len__(self):
        return len(self.statements)

    def computes(self):
        return [s for s in self.statements if isinstance(s, Compute)]

    def to_text(self, g: CompGraph) -> str:
        lines = []
        for s in self.statements:
            if isinstance(s, Compute):
                lines.append(f"%{s.register} = compute {g.nodes[s.node].name}")
            else:
                lines.append(f"deallocate %{s.register}")
        return "\n".join(lines) + "\n"

    def to_json(self, g: CompGraph) -> str:
        out = []
        for s in self.statements:
            if isinstance(s, Compute):
                out.append({"op": "compute", "node": g.nodes[s.node].name,
                            "register": s.register, "args": list(s.args)})
            else:
                out.append({"op": "deallocate", "register": s.register})
        return json.dumps({"register_count": self.register_count, "statements": out}, indent=1) + "\n"


def _bind_args(g: CompGraph, node: int, regs: dict, where: str) -> tuple:
    args = []
    for d in g.deps[node]:
        if d not in regs:
            raise PlanError(f"{where}: {g.nodes[node].name} needs {g.nodes[d].name}, which is not resident")
        args.append(regs[d])
    return tuple(args)


def generate_plan(g: CompGraph, schedule: Schedule, *, check: bool = True) -> ExecutionPlan:
    """Row-major scan of R with deallocations driven by the free indicators.

    Deallocations the formulation leaves implicit are added here: a value that
    is computed or carried into a stage, is not needed by any later consumer
    in that stage and is not retained for the next stage is freed at its own
    slot. Recomputing a value that is still resident frees the stale copy.
    """
    if check:
        bad = [v for v in constraint_violations(g, schedule, frontier=False)
               if not v.startswith(("initial", "terminal", "frontier", "memory"))]
        if bad:
            raise PlanError(f"schedule is not feasible: {bad[0]}")
    R, S, free = schedule.R, schedule.S, schedule.free
    T, n = R.shape
    Sx = last_stage_boundary(S)
    regs = {}  # node -> live register
    stmts, starts = [], []
    r = 0
    for t in range(T):
        starts.append(len(stmts))
        live_from_before = {i for i in regs}
        used_in_stage = {i: any(R[t, j] for j in g.users[i]) for i in range(n)}
        for k in range(n):
            if R[t, k]:
                if k in regs:
                    stmts.append(Deallocate(regs.pop(k)))
                args = _bind_args(g, k, regs, f"stage {t}")
                stmts.append(Compute(k, r, args))
                regs[k] = r
                r += 1
            for i in g.deps[k]:
                if free[t, g.edge_index[(i, k)]]:
                    if i not in regs:
                        raise PlanError(f"stage {t}: free of non-resident {g.nodes[i].name}")
                    stmts.append(Deallocate(regs.pop(i)))
            # implicit self-deallocation (the eliminated F[t, k, k])
            if k in regs and not Sx[t + 1, k] and not used_in_stage[k]:
                if R[t, k] or k in live_from_before:
                    stmts.append(Deallocate(regs.pop(k)))
        for i in list(regs):
            if not Sx[t + 1, i]:
                # defensive: anything still resident and not retained dies here
                stmts.append(Deallocate(regs.pop(i)))
    return ExecutionPlan(tuple(stmts), r, tuple(starts))


def _uses(plan: ExecutionPlan) -> dict:
    last = {}
    for pos, s in enumerate(plan.statements):
        if isinstance(s, Compute):
            last[s.register] = max(last.get(s.register, pos), pos)
            for a in s.args:
                last[a] = pos
    return last


def hoist_deallocations(plan: ExecutionPlan) -> ExecutionPlan:
    """Move every deallocation to just after the last prior use of its register."""
    last = _uses(plan)
    body = [s for s in plan.statements if isinstance(s, Compute)]
    after = {}  # compute position (in body) -> deallocs following it
    comp_pos = {}
    k = 0
    for pos, s in enumerate(plan.statements):
        if isinstance(s, Compute):
            comp_pos[pos] = k
            k += 1
    for pos, s in enumerate(plan.statements):
        if isinstance(s, Deallocate):
            p = last.get(s.register)
            if p is None or p > pos:
                raise PlanError(f"deallocate %{s.register} precedes any use")
            after.setdefault(comp_pos[p], []).append(s)
    stmts = []
    for k, s in enumerate(body):
        stmts.append(s)
        stmts.extend(after.get(k, []))
    starts = _remap_starts(plan, stmts)
    return ExecutionPlan(tuple(stmts), plan.register_count, starts)


def _remap_starts(plan, stmts):
    if not plan.stage_starts:
        return ()
    # stage boundaries follow the compute statements they precede
    first_compute = []
    for st in plan.stage_starts:
        reg = None
        for s in plan.statements[st:]:
            if isinstance(s, Compute):
                reg = s.register
                break
        first_compute.append(reg)
    pos = {s.register: i for i, s in enumerate(stmts) if isinstance(s, Compute)}
    return tuple(pos.get(reg, len(stmts)) for reg in first_compute)


_COMPUTE = re.compile(r"^%(\d+)\s*=\s*compute\s+(\S+)\s*$")
_DEALLOC = re.compile(r"^deallocate\s+%(\d+)\s*$")


def parse_plan_text(g: CompGraph, text: str) -> ExecutionPlan:
    """Inverse of :meth:`ExecutionPlan.to_text`; arguments are rebound by replay."""
    regs = {}
    owner = {}
    stmts = []
    top = -1
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        m = _COMPUTE.match(line)
        if m:
            reg, name = int(m.group(1)), m.group(2)
            if name not in g.name_index:
                raise PlanError(f"line {lineno}: unknown node {name!r}")
            k = g.name_index[name]
            args = _bind_args(g, k, regs, f"line {lineno}")
            stmts.append(Compute(k, reg, args))
            regs[k] = reg
            owner[reg] = k
            top = max(top, reg)
            continue
        m = _DEALLOC.match(line)
        if m:
            reg = int(m.group(1))
            k = owner.pop(reg, None)
            if k is not None and regs.get(k) == reg:
                del regs[k]
            stmts.append(Deallocate(reg))
            continue
        raise PlanError(f"line {lineno}: cannot parse {line!r}")
    return ExecutionPlan(tuple(stmts), top + 1)


def plan_cost(g: CompGraph, plan: ExecutionPlan):
    from fractions import Fraction

    return sum((g.nodes[s.node].cost for s in plan.computes()), Fraction(0))


def count_frees(schedule: Schedule) -> int:
    return int(np.sum(schedule.free))
