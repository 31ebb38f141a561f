"""
How close is the index policy to optimal?
=========================================

For two terminals the joint MDP is small enough to solve exactly by relative
value iteration. We compare its average AoI with a long simulation of the
index policy.
"""

from aoisched import OptimalPolicy, WhittlePolicy, rvi_full, run_slots, symmetric_specs
from aoisched.policies import NoBufferPolicy

horizon = 200_000

for lam in (0.3, 0.6, 1.0):
    specs = symmetric_specs(2, lam)
    sol = rvi_full(specs, A_max=30, D_max=30)
    whittle = run_slots(specs, WhittlePolicy(), horizon, seed=1).mean_aoi
    nobuf = run_slots(specs, NoBufferPolicy(), horizon, seed=1).mean_aoi
    replay = run_slots(specs, OptimalPolicy(sol), horizon, seed=1).mean_aoi
    print(f"lam={lam}: optimum {sol.J:.4f}  replayed {replay:.4f}  "
          f"index {whittle:.4f}  no-buffer {nobuf:.4f}")

# The optimal action table itself: which terminal to serve when both hold a
# packet of age gap d1, d2 (a = 1 for both).
sol = rvi_full(symmetric_specs(2, 0.5), A_max=20, D_max=12)
print(sol.policy[0, 1:9, 0, 1:9])
