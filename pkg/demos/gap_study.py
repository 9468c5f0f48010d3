"""
Relaxation gap of the two stage formulations
=============================================

Solve the eight-layer training graph at a budget of four values, once with
frontier-advancing stages and once without, and compare each integer optimum
with its linear relaxation.
"""
from remat.formulation import RematProblem, build
from remat.graph import make_linear_training
from remat.solver import SolveOptions, solve_lp, solve_milp

g = make_linear_training(8)
print(f"{g.n} nodes, {len(g.edges)} edges")

# frontier-advancing stages: one new node per stage
m = build(RematProblem(g, 4))
print(f"frontier form: {m.num_vars} columns, {m.num_rows} rows")
s = solve_milp(m)
lp = solve_lp(m).objective
print(f"  integer {s.objective}, relaxation {lp:.4f}, ratio {float(s.objective) / lp:.4f}")

# without the frontier rows the relaxation can spread recomputation thinly
m_free = build(RematProblem(g, 4, frontier=False))
lp_free = solve_lp(m_free).objective
print(f"free form: {m_free.num_vars} columns, relaxation {lp_free:.4f}, "
      f"ratio against the integer optimum {float(s.objective) / lp_free:.3f}")

# the integer problem without frontier rows is much harder; give it a few seconds
try:
    s_free = solve_milp(m_free, SolveOptions(time_limit=5))
    print(f"  best integer found in 5 s: {s_free.objective} ({s_free.status.value})")
except Exception as exc:  # time limit without an incumbent
    print(f"  no incumbent in 5 s: {exc}")
