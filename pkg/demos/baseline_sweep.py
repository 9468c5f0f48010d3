"""
Checkpointing heuristics against the optimal schedule
======================================================

For a small U-Net-shaped training graph, evaluate every heuristic
hyperparameter, then ask the integer program for the cheapest schedule at the
same memory.
"""
from remat.baselines import STRATEGIES, strategy_schedules
from remat.formulation import RematProblem, build
from remat.graph import make_linear_training, make_unet_training
from remat.plan import generate_plan
from remat.sim import simulate
from remat.solver import solve_milp

for g, label in ((make_linear_training(6), "linear, 6 layers"), (make_unet_training(3), "U-Net, depth 3")):
    print(f"\n{label}: {g.n} nodes")
    print(f"{'strategy':<15}{'peak':>6}{'cost':>6}{'optimal':>9}")
    optimal = {}
    for name in STRATEGIES:
        seen = set()
        for s in strategy_schedules(g, name):
            peak = simulate(g, generate_plan(g, s)).peak_mem
            if (peak, s.objective) in seen:
                continue
            seen.add((peak, s.objective))
            if peak not in optimal:
                optimal[peak] = solve_milp(build(RematProblem(g, peak))).objective
            print(f"{name:<15}{peak:>6}{str(s.objective):>6}{str(optimal[peak]):>9}")

# chen-* and griewank need a path-shaped forward pass, so they print nothing
# for the U-Net; the articulation-point and linearized variants still apply.
