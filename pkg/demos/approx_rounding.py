"""
Rounding the relaxation
=======================

Two-phase rounding keeps the fractional checkpoint decisions above a
threshold (or samples them), then switches on just enough recomputation to
make the result valid. Rounding both matrices independently almost never
gives a valid schedule.
"""
from fractions import Fraction

import numpy as np

from remat.approx import (RoundingMode, RoundingOptions, approx_samples, approx_schedule,
                          direct_rounding_feasible_count)
from remat.formulation import RematProblem, build
from remat.graph import make_linear_training
from remat.solver import solve_milp

g = make_linear_training(8)
budget = 6
problem = RematProblem(g, budget)
opt = solve_milp(build(problem)).objective
print(f"optimal cost at budget {budget}: {opt}")

for eps in (Fraction(0), Fraction(1, 10), Fraction(3, 10)):
    try:
        s, rep = approx_schedule(problem, RoundingOptions(epsilon=eps))
    except Exception as exc:
        print(f"epsilon {eps}: {exc}")
        continue
    fits = "fits" if rep.feasible else "exceeds budget"
    print(f"epsilon {eps}: cost {s.objective} ({float(s.objective / opt):.3f}x), peak {rep.peak_mem} {fits}")

# randomized rounding: a spread of costs around the deterministic one
_, samples = approx_samples(problem, RoundingOptions(mode=RoundingMode.RANDOMIZED, samples=200, seed=1))
costs = np.array([float(x.schedule.objective) for x in samples])
ok = np.array([x.report.feasible for x in samples])
print(f"randomized: mean cost {costs.mean():.1f}, best feasible {costs[ok].min() if ok.any() else 'none'}, "
      f"{ok.sum()}/200 within budget")

# without the repair phase
print("direct rounding of both matrices:",
      direct_rounding_feasible_count(RematProblem(g, 4), 1000), "valid out of 1000")
