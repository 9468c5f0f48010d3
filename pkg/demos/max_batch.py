"""
Largest batch under a memory budget
===================================

Activation memory grows linearly with the batch size. Search for the largest
batch whose scaled graph still admits a schedule, first with unlimited
recomputation and then with at most one extra forward pass.
"""
import math

from remat.formulation import cost_cap_rule, max_batch_search
from remat.graph import make_linear_training

g = make_linear_training(4)
print(f"{'budget':>7}{'no cap':>8}{'one extra pass':>16}")
for budget in (8, 12, 16, 24, 32):
    free = max_batch_search(g, budget, math.inf).batch
    capped = max_batch_search(g, budget).batch
    print(f"{budget:>7}{free:>8}{capped:>16}")
print(f"cost cap used: {cost_cap_rule(g)}")
