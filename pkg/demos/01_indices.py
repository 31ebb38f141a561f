"""
Whittle indices and where they come from
========================================

The index of a terminal in state (a, d) is the service charge at which
serving and idling cost the same. We compute it in closed form and compare
with a brute-force value iteration on the single-terminal problem.
"""

import numpy as np

from aoisched import index_bernoulli, index_periodic, index_unreliable, solve_decoupled
from aoisched.mdp import indifference_charge

# Saturated traffic: the index reduces to d(d+1)/2.
print([index_bernoulli(1, d, 1.0) for d in range(1, 8)])

# Bernoulli arrivals. a = slots since the buffered packet arrived,
# d = age gap between that packet and what the receiver holds.
lam = 0.3
for a, d in [(1, 1), (2, 3), (5, 2), (1, 10)]:
    closed = index_bernoulli(a, d, lam)
    numeric = indifference_charge(lam, a, d, A_max=120)
    print(f"a={a} d={d}  closed form {closed:8.3f}   value iteration {numeric:8.3f}")

# The numeric charge is only defined up to the integer jumps of d, so it
# lands between the neighbouring closed-form values.
lo, hi = index_bernoulli(2, 2, lam), index_bernoulli(2, 4, lam)
print(f"bracket [{lo:.3f}, {hi:.3f}]")

# Periodic traffic and an erasure channel.
print("periodic, period 4:", [index_periodic(1, k, 4) for k in range(1, 5)])
print("p_e = 0.5 doubles the index:", index_unreliable(index_bernoulli(1, 3, lam), 0.5))

# The decoupled problem has a threshold solution: serve once d reaches D(a).
sol = solve_decoupled(lam=0.3, m=20.0)
print(f"J* = {sol.J_star:.4f}, D1 = {sol.D1}")
print("thresholds D(a), a = 1..10:", sol.thresholds(10))

# Surface of the index over a grid, vectorised.
from aoisched.indices import bernoulli_index

A, D = np.meshgrid(np.arange(1, 6), np.arange(0, 6), indexing="ij")
print(np.round(bernoulli_index(A, D, lam), 2))
