"""
Centralized scheduling policies on a larger network
===================================================

Index policy, the no-buffer variant and round robin over a growing set of
low-rate terminals.
"""

from aoisched import make_policy, run_slots, symmetric_specs

lam = 0.05
horizon = 100_000
kinds = ["whittle", "whittle_no_buffer", "rr_one", "max_age", "stationary_random"]

print("N    " + "  ".join(f"{k:>17}" for k in kinds))
for n in (5, 10, 20, 50):
    specs = symmetric_specs(n, lam)
    row = [run_slots(specs, make_policy(k), horizon, seed=3).mean_aoi for k in kinds]
    print(f"{n:<4} " + "  ".join(f"{v:17.2f}" for v in row))

# Mixed traffic: one periodic sensor among Bernoulli ones, with weights.
from aoisched import TerminalSpec

specs = [
    TerminalSpec(id=0, period=5, omega=2.0),
    TerminalSpec(id=1, lam=0.2),
    TerminalSpec(id=2, lam=0.2, p_e=0.3),
]
m = run_slots(specs, make_policy("whittle"), horizon, seed=4)
print("per-terminal mean AoI:", m.terminal_mean.round(3), "weighted mean:", round(m.mean_aoi, 3))
