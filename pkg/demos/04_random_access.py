"""
Index-prioritized random access
===============================

Without a scheduler, terminals contend for the channel. With IPRA only
terminals whose own index exceeds a threshold take part. A threshold of 0
is plain slotted ALOHA.
"""

import numpy as np

from aoisched import AccessConfig, run_access, staggered_states, symmetric_specs, tune_ipra

specs = symmetric_specs(20, 0.02)
T_s = 10
horizon = 200_000
start = staggered_states(len(specs), T_s)

aloha = run_access(specs, AccessConfig(p=0.2, T_s=T_s), horizon, "aloha", seed=0,
                   initial=start, warmup=20_000)
central = run_access(specs, AccessConfig(T_s=T_s), horizon, "centralized", seed=0,
                     initial=start, warmup=20_000)
print(f"ALOHA {aloha.mean_aoi:.1f}, centralized {central.mean_aoi:.1f}")
print("ALOHA channel use:", {k: aloha.stats[k] for k in ("successes", "collisions")})

# Sweep the threshold by hand.
for th in (0, 1_000, 10_000, 30_000, 40_000, 100_000):
    cfg = AccessConfig(p=0.2, index_threshold=th, T_s=T_s)
    m = run_access(specs, cfg, horizon, "ipra", seed=0, initial=start, warmup=20_000)
    print(f"threshold {th:>6}: AoI {m.mean_aoi:7.1f}  collisions {m.stats['collisions']}")

# Too low a threshold jams the channel for good. The tuner finds the edge and
# keeps a small margin above it.
tuned = tune_ipra(specs, AccessConfig(p=0.2, T_s=T_s), horizon=50_000, replications=2,
                  initial=start, warmup=10_000)
ths, aoi = tuned.curve()
print(f"tuned threshold {tuned.cfg.index_threshold:.1f}, AoI {tuned.aoi:.1f}")
print("searched:", np.round(ths, 1))
