"""AoI deadline guarantees for terminals served at constant intervals.

A Bernoulli(lam) terminal served every ``Gamma`` slots has a closed-form
stationary AoI distribution. Bounding its tail at the deadline ``H`` gives the
longest admissible interval per terminal, and a set of terminals fits on one
channel when ``sum(1 / Gamma_n) <= 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import AgeTally, RunMetrics, SpecTable, TerminalSpec, rng_stream


class InfeasibleDeadline(ValueError):
    """Even serving the terminal every slot violates its deadline budget."""


def stationary_cdf(lam: float, gamma: int, x):
    """``Pr{h <= x}`` for Bernoulli(lam) arrivals and service every ``gamma`` slots."""
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    if not 0 < lam <= 1:
        raise ValueError("need 0 < lam <= 1")
    xs = np.asarray(x, dtype=float)
    if np.any(xs < 1):
        raise ValueError("the AoI is at least one slot")
    if lam == 1.0:
        out = np.where(xs <= gamma, xs / gamma, 1.0)
    else:
        q = 1.0 - lam
        # Clip so the branch not taken cannot overflow.
        low = (xs - q / lam * (1.0 - q ** np.minimum(xs, gamma))) / gamma
        high = 1.0 - q ** np.maximum(xs - gamma + 1, 1) * (1.0 - q**gamma) / (lam * gamma)
        out = np.where(xs <= gamma, low, high)
    return float(out) if np.ndim(out) == 0 else out


def violation_probability(lam: float, gamma: int, H: int) -> float:
    """Stationary ``Pr{h > H}``."""
    return 1.0 - stationary_cdf(lam, gamma, H)


def lambert_w_neg1(x: float) -> float:
    """Lower real branch ``W_{-1}`` of the Lambert W function, ``-1/e <= x < 0``."""
    branch = -math.exp(-1.0)
    if not branch - 1e-15 <= x < 0:
        raise ValueError(f"W_-1 is defined on [-1/e, 0), got {x}")
    if x <= branch:
        return -1.0
    if x < -0.25:
        # Series about the branch point.
        p = -math.sqrt(2.0 * (math.e * x + 1.0))
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3
    else:
        L1 = math.log(-x)
        w = L1 - math.log(-L1)
    for _ in range(100):
        ew = math.exp(w)
        f = w * ew - x
        if f == 0:
            break
        wp1 = w + 1.0
        if wp1 == 0:
            break
        step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w_new = w - step
        if w_new > -1.0:
            w_new = 0.5 * (w - 1.0)
        if abs(w_new - w) <= 1e-15 * abs(w_new):
            w = w_new
            break
        w = w_new
    return w


@dataclass(frozen=True)
class DeadlineSpec:
    lam: float
    H: int
    epsilon: float

    def __post_init__(self):
        if not 0 < self.lam <= 1:
            raise ValueError("need 0 < lam <= 1")
        if self.H < 1:
            raise ValueError("the deadline must be at least one slot")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")

    @classmethod
    def from_terminal(cls, spec: TerminalSpec) -> "DeadlineSpec":
        if spec.lam is None or spec.deadline is None or spec.epsilon is None:
            raise ValueError("terminal needs lam, deadline and epsilon")
        return cls(spec.lam, spec.deadline, spec.epsilon)


def max_interval(spec: DeadlineSpec) -> int:
    """Largest service interval whose exact stationary tail ``Pr{h > H}`` is <= epsilon."""
    ok = lambda g: violation_probability(spec.lam, g, spec.H) <= spec.epsilon  # noqa: E731
    if not ok(1):
        raise InfeasibleDeadline(
            f"Pr{{h > {spec.H}}} exceeds {spec.epsilon} even when served every slot"
        )
    lo, hi = 1, 2
    while ok(hi):
        lo, hi = hi, 2 * hi
        if hi > 1 << 40:
            raise RuntimeError("interval search diverged")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def lambert_interval(spec: DeadlineSpec) -> float:
    """Closed-form interval bound under the high-reliability approximation
    ``(1 - lam)^Gamma << 1``; returned unrounded (``inf`` for lam = 1)."""
    if spec.lam == 1.0:
        return math.inf
    log_q = math.log(1.0 - spec.lam)
    # c = lam / (1-lam)^(H+1), kept in log space to avoid overflow.
    log_c = math.log(spec.lam) - (spec.H + 1) * log_q
    arg = -math.exp(math.log(-log_q) - math.log(spec.epsilon) - log_c)
    if arg < -math.exp(-1.0):
        return 0.0
    return lambert_w_neg1(arg) / log_q


def c0(lam: float) -> float:
    log_q = math.log(1.0 - lam)
    return 1.0 + (math.log(-log_q) - math.log(lam)) / log_q


def deadline_terminal_bound(lam: float, H: int, epsilon: float) -> float:
    """Large-H supportable-terminal count for a common deadline ``H``."""
    return H - math.log(epsilon) / math.log(1.0 - lam) + c0(lam)


@dataclass
class AdmissionReport:
    feasible: bool
    intervals: list
    lambert_intervals: list
    utilization: float
    n_deadline_bound: Optional[float] = None
    n_mean_bound: Optional[int] = None
    infeasible_terminals: tuple = ()

    def rows(self) -> list[dict]:
        return [
            {"terminal": n, "gamma_max": g, "gamma_lambert": lg}
            for n, (g, lg) in enumerate(zip(self.intervals, self.lambert_intervals))
        ]


def admit(specs: Sequence[DeadlineSpec]) -> AdmissionReport:
    """Interval per terminal and whether they fit together on one channel."""
    intervals, lamb, bad = [], [], []
    for n, s in enumerate(specs):
        try:
            intervals.append(max_interval(s))
        except InfeasibleDeadline:
            intervals.append(None)
            bad.append(n)
        lamb.append(lambert_interval(s))
    util = math.inf if bad else sum(1.0 / g for g in intervals)
    report = AdmissionReport(
        feasible=not bad and util <= 1.0 + 1e-12,
        intervals=intervals,
        lambert_intervals=lamb,
        utilization=util,
        infeasible_terminals=tuple(bad),
    )
    if specs and len(set(specs)) == 1 and specs[0].lam < 1:
        s = specs[0]
        report.n_deadline_bound = deadline_terminal_bound(s.lam, s.H, s.epsilon)
        report.n_mean_bound = 2 * s.H
    return report


@dataclass
class PeriodicSchedule:
    intervals: list
    slots: np.ndarray  # terminal served in each slot of the hyperperiod, -1 if none
    max_gap: list

    @property
    def hyperperiod(self) -> int:
        return len(self.slots)

    @property
    def jitter(self) -> list:
        return [g - G for g, G in zip(self.max_gap, self.intervals)]

    @property
    def utilization(self) -> float:
        return sum(1.0 / g for g in self.intervals)


def _cyclic_gaps(times: np.ndarray, L: int) -> np.ndarray:
    t = np.sort(times)
    return np.diff(np.append(t, t[0] + L))


def build_schedule(intervals: Sequence[int], hyperperiod: Optional[int] = None,
                   max_hyperperiod: int = 1_000_000) -> PeriodicSchedule:
    """Place every terminal's services on one slotted channel.

    Terminals are handled in order of increasing interval. A terminal's first
    service goes to the first free slot; later ones are due every ``Gamma``
    slots after it and, on a clash, move to the next free slot (never earlier).
    """
    gammas = [int(g) for g in intervals]
    if any(g < 1 for g in gammas):
        raise ValueError("intervals must be >= 1")
    if sum(1.0 / g for g in gammas) > 1.0 + 1e-12:
        raise ValueError("total utilization exceeds one")
    L = hyperperiod or math.lcm(*gammas)
    if L > max_hyperperiod:
        raise ValueError(f"hyperperiod {L} too long; pass a shorter multiple-free one")
    slots = np.full(L, -1, dtype=np.int64)
    taken = {}
    for n in sorted(range(len(gammas)), key=lambda k: (gammas[k], k)):
        g = gammas[n]
        free = np.flatnonzero(slots < 0)
        if len(free) == 0:
            raise RuntimeError("schedule overflow")
        start = int(free[0])
        times = []
        for k in range(max(1, L // g)):
            due = start + k * g
            for shift in range(L):
                s = (due + shift) % L
                if slots[s] < 0:
                    break
            else:
                raise RuntimeError(f"schedule overflow placing terminal {n}")
            slots[s] = n
            times.append(s)
        taken[n] = np.array(times)
    max_gap = [int(_cyclic_gaps(taken[n], L).max()) for n in range(len(gammas))]
    return PeriodicSchedule(intervals=gammas, slots=slots, max_gap=max_gap)


def simulate_schedule(
    specs: Sequence[TerminalSpec],
    slots: Sequence[int],
    horizon: int,
    seed: int = 0,
    block: int = 1 << 15,
) -> RunMetrics:
    """AoI of terminals served by a fixed cyclic slot table, without a slot loop.

    Draws arrivals from the same stream as :func:`aoisched.core.run_slots`, so
    for a :class:`~aoisched.policies.FixedSchedulePolicy` with the same table
    and seed both produce identical histograms. Channels are taken as reliable.
    """
    table = SpecTable(specs)
    if np.any(table.p_e > 0):
        raise ValueError("simulate_schedule assumes reliable channels")
    slots = np.asarray(slots, dtype=np.int64)
    n = table.n
    rng = rng_stream(seed, "arrivals")
    tally = AgeTally(n)
    last_arrival = np.full(n, -1, dtype=np.int64)  # slot of the newest arrival so far
    receiver = np.full(n, -1, dtype=np.int64)  # generation slot of the freshest delivery
    deliveries = np.zeros(n, dtype=np.int64)
    cols = np.arange(n)
    for start in range(0, horizon, block):
        size = min(block, horizon - start)
        t = np.arange(start, start + size)
        arr = table.arrivals(start, rng.random((size, n)))
        stamp = np.where(arr, t[:, None], -1)
        newest = np.maximum.accumulate(np.vstack([last_arrival, stamp]), axis=0)
        # Packet available at slot t arrived at t-1 or earlier.
        before = newest[:-1]
        served = slots[t % len(slots)][:, None] == cols[None, :]
        cand = np.where(served, before, -1)
        got = np.maximum.accumulate(np.vstack([receiver, cand]), axis=0)[1:]
        deliveries += (served & (before > np.vstack([receiver, got[:-1]]))).sum(axis=0)
        tally.add_rows(t[:, None] - got)
        last_arrival, receiver = newest[-1], got[-1]
    return RunMetrics(
        horizon=horizon,
        omega=table.omega,
        histograms=tally.histograms(),
        sums=tally.sums,
        age_cap=tally.cap,
        deadline=table.deadline,
        deliveries=deliveries,
        attempts=np.zeros(n, dtype=np.int64),
        idle_slots=0,
    )
