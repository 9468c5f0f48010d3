"""Command-line front end.

Exit codes: 0 success (optimal for ``solve``), 2 feasible but not proven
optimal, 3 infeasible, 4 input/output error.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

from . import baselines
from .approx import RoundingOptions, approx_schedule
from .errors import InfeasibleError, SolverTimeout
from .formulation import RematProblem, build, cost_cap_rule, max_batch_search
from .graph import (GraphError, load_graph, make_chain, make_linear_training,
                    make_residual_training, make_unet_training)
from .plan import PlanError, generate_plan, hoist_deallocations, parse_plan_text
from .schedule import Status
from .sim import SimulationError, minimal_budget_bound, oracle_min_budget, simulate
from .solver import SolveOptions, export_mps, solve_lp, solve_milp

EXIT_OK, EXIT_FEASIBLE, EXIT_INFEASIBLE, EXIT_IO = 0, 2, 3, 4
ORACLE_LIMIT = 9

_BUILTIN = {
    "chain": make_chain,
    "linear": make_linear_training,
    "residual": make_residual_training,
    "unet": make_unet_training,
}


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors share the I/O exit code; argparse's default 2 is taken
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_IO, f"{self.prog}: error: {message}\n")


def read_graph(spec: str):
    """A graph JSON path, or ``linear:L``, ``residual:B``, ``unet:D``, ``chain:N``."""
    kind, _, arg = spec.partition(":")
    if kind in _BUILTIN and arg.isdigit() and not Path(spec).exists():
        return _BUILTIN[kind](int(arg))
    try:
        return load_graph(spec)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read graph {spec!r}: {exc}") from exc


def parse_budget(text: str):
    if text.lower() in ("inf", "infinity", "none"):
        return math.inf
    try:
        return Fraction(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid budget {text!r}") from exc


def _fmt(x) -> str:
    if isinstance(x, Fraction):
        return str(x.numerator) if x.denominator == 1 else f"{float(x):.6g}"
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def _write(path, text):
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc


def _emit_plan(args, g, sched):
    plan = generate_plan(g, sched)
    if getattr(args, "hoist", False):
        plan = hoist_deallocations(plan)
    if getattr(args, "plan_out", None):
        _write(args.plan_out, plan.to_text(g))
    return plan


# commands ------------------------------------------------------------------------

def cmd_solve(args) -> int:
    g = read_graph(args.graph)
    problem = RematProblem(g, args.budget, frontier=not args.no_frontier, epsilon=args.epsilon)
    m = build(problem)
    if args.mps_out:
        try:
            export_mps(m, args.mps_out)
        except OSError as exc:
            raise InputError(f"cannot write {args.mps_out}: {exc}") from exc
    opts = SolveOptions(time_limit=args.time_limit, seed=args.seed, backend=args.backend)
    sched = solve_milp(m, opts)
    plan = _emit_plan(args, g, sched)
    rep = simulate(g, plan, args.budget)
    print(f"status: {sched.status.value}")
    print(f"objective: {_fmt(sched.objective)}")
    print(f"bound: {_fmt(sched.bound)}")
    print(f"peak_mem: {rep.peak_mem}")
    return EXIT_OK if sched.status is Status.OPTIMAL else EXIT_FEASIBLE


def cmd_approx(args) -> int:
    g = read_graph(args.graph)
    opts = RoundingOptions(mode=args.mode, threshold=Fraction(args.threshold), samples=args.samples,
                           seed=args.seed, epsilon=Fraction(args.epsilon))
    sched, rep = approx_schedule(RematProblem(g, args.budget), opts)
    _emit_plan(args, g, sched)
    print(f"status: {'feasible' if rep.feasible else 'over_budget'}")
    print(f"objective: {_fmt(sched.objective)}")
    print(f"lp_bound: {_fmt(sched.bound)}")
    print(f"peak_mem: {rep.peak_mem}")
    return EXIT_OK if rep.feasible else EXIT_INFEASIBLE


def cmd_baseline(args) -> int:
    g = read_graph(args.graph)
    params = {}
    if args.b is not None:
        params["b"] = Fraction(args.b)
    if args.slots is not None:
        params["slots"] = args.slots
    try:
        sched = baselines.baseline_schedule(g, args.strategy, **params)
    except KeyError as exc:
        raise InputError(f"strategy {args.strategy} needs --{exc.args[0]}") from exc
    plan = _emit_plan(args, g, sched)
    rep = simulate(g, plan, args.budget)
    print(f"strategy: {args.strategy}")
    print(f"objective: {_fmt(sched.objective)}")
    print(f"peak_mem: {rep.peak_mem}")
    print(f"feasible: {str(rep.feasible).lower()}")
    return EXIT_OK if rep.feasible else EXIT_INFEASIBLE


SWEEP_COLUMNS = ("strategy", "budget", "cost", "overhead_ratio", "peak_mem", "status")


def auto_budgets(g, points: int = 6) -> list:
    """Geometric grid from the smallest feasible budget to the checkpoint-all peak."""
    hi = simulate(g, generate_plan(g, baselines.checkpoint_all(g))).peak_mem
    lo = oracle_min_budget(g) if g.n <= ORACLE_LIMIT else minimal_budget_bound(g)
    if lo >= hi:
        return [hi]
    out = sorted({round(lo * (hi / lo) ** (k / (points - 1))) for k in range(points)})
    return out


def _sweep_task(task):
    g, strategy, budget, base_cost, time_limit = task
    rows = []

    def row(cost, peak, status):
        ratio = "" if cost is None else f"{float(Fraction(cost) / base_cost):.6f}"
        rows.append([strategy, _fmt(budget), "" if cost is None else _fmt(cost), ratio,
                     "" if peak is None else peak, status])

    if strategy == "ilp":
        try:
            s = solve_milp(build(RematProblem(g, budget)), SolveOptions(time_limit=time_limit))
            rep = simulate(g, generate_plan(g, s), budget)
            row(s.objective, rep.peak_mem, s.status.value)
        except InfeasibleError:
            row(None, None, "infeasible")
        except SolverTimeout:
            row(None, None, "time_limit")
    elif strategy == "approx":
        try:
            s, rep = approx_schedule(RematProblem(g, budget))
            row(s.objective, rep.peak_mem, "feasible" if rep.feasible else "over_budget")
        except InfeasibleError:
            row(None, None, "infeasible")
    else:
        found = False
        for s in baselines.strategy_schedules(g, strategy):
            rep = simulate(g, generate_plan(g, s), budget)
            if rep.feasible:
                row(s.objective, rep.peak_mem, "feasible")
                found = True
        if not found:
            row(None, None, "infeasible")
    return rows


def cmd_sweep(args) -> int:
    g = read_graph(args.graph)
    known = set(baselines.STRATEGIES) | {"ilp", "approx"}
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    unknown = [s for s in strategies if s not in known]
    if unknown:
        raise InputError(f"unknown strategy {unknown[0]!r}; choose from {', '.join(sorted(known))}")
    if args.budgets == "auto":
        budgets = auto_budgets(g)
    else:
        budgets = [parse_budget(b) for b in args.budgets.split(",")]
    base_cost = baselines.checkpoint_all(g).objective
    tasks = [(g, s, b, base_cost, args.time_limit) for s in strategies for b in budgets]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            results = list(ex.map(_sweep_task, tasks))
    else:
        results = [_sweep_task(t) for t in tasks]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for rows in results:
        w.writerows(rows)
    if args.csv_out:
        _write(args.csv_out, buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def gap_report(g, budget, time_limit: float = 60.0) -> dict:
    """ILP and LP objectives for both stage formulations."""
    out = {}
    for frontier in (True, False):
        m = build(RematProblem(g, budget, frontier=frontier))
        lp = solve_lp(m).objective
        try:
            s = solve_milp(m, SolveOptions(time_limit=time_limit))
            out[frontier] = {"lp": lp, "ilp": float(s.objective), "bound": float(s.bound),
                             "status": s.status.value}
        except SolverTimeout:
            out[frontier] = {"lp": lp, "ilp": math.inf, "bound": lp, "status": "time_limit"}
    return out


def cmd_gap(args) -> int:
    g = read_graph(args.graph)
    rep = gap_report(g, args.budget, args.time_limit)
    best = min(r["ilp"] for r in rep.values())
    for frontier, r in rep.items():
        label = "frontier" if frontier else "no-frontier"
        lp = r["lp"]
        print(f"{label}: cost_frac={lp:.6g} cost_int={r['ilp']:.6g} status={r['status']}")
        if r["status"] == "optimal":
            print(f"{label}: ratio={r['ilp'] / lp:.4f}")
        else:
            print(f"{label}: ratio in [{r['bound'] / lp:.4f}, {r['ilp'] / lp:.4f}]")
        print(f"{label}: ratio_vs_best_integral={best / lp:.4f}")
    return EXIT_OK


def cmd_maxbatch(args) -> int:
    g = read_graph(args.graph)
    if args.cost_cap == "fwd1":
        cap = cost_cap_rule(g)
    elif args.cost_cap == "none":
        cap = math.inf
    else:
        cap = Fraction(args.cost_cap)
    opts = SolveOptions(time_limit=args.time_limit)
    res = max_batch_search(g, args.budget, cap, opts=opts, max_batch=args.max_batch)
    from .costmodel import scale_memory

    gb = scale_memory(g, res.batch)
    _emit_plan(args, gb, res.schedule)
    print(f"max_batch: {res.batch}")
    if res.hit_limit:
        print("note: search limit reached; value is a lower bound")
    if args.plan_out:
        print(f"plan: {args.plan_out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    g = read_graph(args.graph)
    try:
        text = Path(args.plan).read_text()
    except OSError as exc:
        raise InputError(f"cannot read plan {args.plan}: {exc}") from exc
    plan = parse_plan_text(g, text)
    rep = simulate(g, plan, args.budget)
    if args.trace_out:
        _write(args.trace_out, rep.trace_csv(g, plan))
    print(f"cost: {_fmt(rep.total_cost)}")
    print(f"peak_mem: {rep.peak_mem}")
    print(f"feasible: {str(rep.feasible).lower()}")
    print(f"terminal_computed: {str(rep.terminal_computed).lower()}")
    return EXIT_OK if rep.feasible else EXIT_INFEASIBLE


# parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="remat", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="solver progress on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, budget_required=True):
        sp.add_argument("--graph", required=True,
                        help="graph JSON file or builtin linear:L, residual:B, unet:D, chain:N")
        sp.add_argument("--budget", type=parse_budget, required=budget_required,
                        default=math.inf, help="memory budget in bytes, or inf")

    s = sub.add_parser("solve", help="optimal schedule by integer programming")
    common(s)
    s.add_argument("--time-limit", type=float, default=60.0)
    s.add_argument("--no-frontier", action="store_true")
    s.add_argument("--epsilon", type=Fraction, default=Fraction(0))
    s.add_argument("--mps-out")
    s.add_argument("--plan-out")
    s.add_argument("--hoist", action="store_true", help="move deallocations to just after last use")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--backend", choices=("highs", "bnb"), default="highs")
    s.set_defaults(func=cmd_solve)

    a = sub.add_parser("approx", help="LP relaxation plus two-phase rounding")
    common(a)
    a.add_argument("--mode", choices=("deterministic", "randomized"), default="deterministic")
    a.add_argument("--threshold", default="1/2")
    a.add_argument("--samples", type=int, default=1)
    a.add_argument("--epsilon", default="1/10")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--plan-out")
    a.add_argument("--hoist", action="store_true")
    a.set_defaults(func=cmd_approx)

    b = sub.add_parser("baseline", help="checkpointing heuristic")
    common(b, budget_required=False)
    b.add_argument("--strategy", required=True, choices=baselines.STRATEGIES)
    b.add_argument("--b", help="segment size for greedy strategies")
    b.add_argument("--slots", type=int, help="snapshot slots for griewank")
    b.add_argument("--plan-out")
    b.add_argument("--hoist", action="store_true")
    b.set_defaults(func=cmd_baseline)

    w = sub.add_parser("sweep", help="cost against budget for several strategies (CSV)")
    w.add_argument("--graph", required=True)
    w.add_argument("--budgets", default="auto", help="comma-separated budgets or 'auto'")
    w.add_argument("--strategies", default="ilp,checkpoint-all,chen-sqrt,chen-greedy,griewank")
    w.add_argument("--csv-out")
    w.add_argument("--time-limit", type=float, default=60.0)
    w.add_argument("--jobs", type=int, default=1)
    w.add_argument("--seed", type=int, default=0)
    w.set_defaults(func=cmd_sweep)

    gp = sub.add_parser("gap", help="integer against relaxed optimum, both stage formulations")
    common(gp)
    gp.add_argument("--time-limit", type=float, default=60.0)
    gp.set_defaults(func=cmd_gap)

    mb = sub.add_parser("maxbatch", help="largest batch size that fits the budget")
    common(mb)
    mb.add_argument("--cost-cap", default="fwd1", help="'fwd1' (one extra forward pass), 'none' or a number")
    mb.add_argument("--max-batch", type=int, default=1 << 16)
    mb.add_argument("--time-limit", type=float, default=60.0)
    mb.add_argument("--plan-out")
    mb.set_defaults(func=cmd_maxbatch)

    sm = sub.add_parser("simulate", help="replay a plan file")
    common(sm, budget_required=False)
    sm.add_argument("--plan", required=True)
    sm.add_argument("--trace-out")
    sm.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (InputError, GraphError, PlanError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverTimeout as exc:
        print(f"time limit: {exc}", file=sys.stderr)
        return EXIT_FEASIBLE


if __name__ == "__main__":
    sys.exit(main())
