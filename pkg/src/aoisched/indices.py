"""Closed-form Whittle indices and the threshold solution of the decoupled model.

The decoupled model is a single terminal that pays ``a + d`` per slot when
idle and ``a + m`` when it transmits, ``m`` being the service charge. Its
optimal policy schedules in state ``(a, d)`` iff ``d >= D_a``; the index of a
state is the charge at which both actions are equally good.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import TerminalState

_EPS = 1e-9


def _ceil(x: float) -> int:
    # Values that are integers up to float noise must not round up.
    return math.ceil(x - _EPS * max(1.0, abs(x)))


def _check_rate(lam) -> None:
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0) or np.any(lam > 1) or np.any(np.isnan(lam)):
        raise ValueError("the Bernoulli index needs 0 < lam <= 1")


def bernoulli_index(a, d, lam, omega=1.0):
    """Vectorized index for Bernoulli arrivals on a reliable channel."""
    a = np.asarray(a, dtype=float)
    d = np.asarray(d, dtype=float)
    lam = np.asarray(lam, dtype=float)
    half = 0.5 * lam
    boundary = a * (half * a + (1.0 - half))
    x = (d + half * a * (a - 1.0)) / (1.0 - lam + lam * a)
    upper = x * (0.5 * x + (1.0 / lam - 0.5))
    out = np.where(d > boundary, upper, d / lam)
    return out if omega == 1.0 else omega * out


def index_bernoulli(a: int, d: int, lam: float, omega: float = 1.0) -> float:
    """Index of state ``(a, d)`` for Bernoulli(lam) arrivals.

    >>> index_bernoulli(1, 3, 1.0)
    6.0
    """
    if a < 1 or d < 0:
        raise ValueError("need a >= 1 and d >= 0")
    _check_rate(lam)
    if omega <= 0:
        raise ValueError("omega must be positive")
    return float(bernoulli_index(a, d, lam, omega))


def periodic_index(a, n_p, period, omega=1.0):
    """Vectorized index for one packet every ``period`` slots."""
    a = np.asarray(a, dtype=float)
    n_p = np.asarray(n_p, dtype=float)
    period = np.asarray(period, dtype=float)
    k1 = n_p * (period - a + 1.0) / period
    return omega * period**2 * (np.floor(k1) + 1.0) * (k1 - np.floor(k1 / 2.0))


def index_periodic(a: int, n_p: int, period: int, omega: float = 1.0) -> float:
    """Index of a periodic terminal whose packet has waited ``a`` slots and that
    missed ``n_p`` whole periods since its last delivered update."""
    if not 1 <= a <= period:
        raise ValueError(f"need 1 <= a <= period, got a={a}, period={period}")
    if n_p < 0:
        raise ValueError("n_p must be non-negative")
    return float(periodic_index(a, n_p, period, omega))


def index_unreliable(reliable_index: float, p_e: float) -> float:
    """Scale a reliable-channel index by the per-attempt success probability."""
    if not 0.0 <= p_e < 1.0:
        raise ValueError("p_e must lie in [0, 1)")
    if reliable_index < 0:
        raise ValueError("indices are non-negative")
    return (1.0 - p_e) * reliable_index


def terminal_indices(table, a, d) -> np.ndarray:
    """Operational index of every terminal: the reliable index of its arrival
    pattern, times its weight, times ``1 - p_e``.

    ``a`` and ``d`` have terminals on the last axis, so a (slots x terminals)
    block is evaluated in one call.
    """
    if not table.periodic.any():
        return bernoulli_index(a, d, table.lam) * table.weight
    a = np.asarray(a)
    d = np.asarray(d)
    out = np.zeros(a.shape)
    b = table.bernoulli
    if b.any():
        out[..., b] = bernoulli_index(a[..., b], d[..., b], table.lam[b])
    p = table.periodic
    period = table.period[p]
    dp = d[..., p]
    # a <= period whenever d > 0; the clip only guards empty buffers.
    vals = periodic_index(np.clip(a[..., p], 1, period), dp // period, period)
    out[..., p] = np.where(dp > 0, vals, 0.0)
    return out * table.weight


@dataclass(frozen=True)
class DecoupledSolution:
    """Threshold solution of the decoupled model for one (lam, m)."""

    lam: float
    m: float
    J_star: float
    D1: int

    def threshold(self, a: int) -> int:
        if a < 1:
            raise ValueError("a must be >= 1")
        lam, J = self.lam, self.J_star
        if a < self.D1:
            raw = _ceil((1 - lam + a * lam) * J - a + 1 - lam * a * (a - 1) / 2 - 1 / lam)
        else:
            raw = _ceil(lam * self.m)
        # With a free channel every state is (weakly) worth serving.
        return max(raw, 1) if self.m > 0 else max(raw, 0)

    def thresholds(self, a_max: int) -> np.ndarray:
        return np.array([self.threshold(a) for a in range(1, a_max + 1)], dtype=np.int64)

    @property
    def a_M(self) -> int:
        """Smallest a beyond which the threshold stays constant."""
        a = self.D1
        top = self.threshold(self.D1)
        while a > 1 and self.threshold(a - 1) == top:
            a -= 1
        return a

    def schedules(self, a: int, d: int) -> bool:
        return d >= self.threshold(a)

    def f_zero(self, a: int) -> float:
        """Differential cost ``f(a, 0)`` with ``f(1, 0) = 0``."""
        lam, J, m = self.lam, self.J_star, self.m
        if a < self.D1 + 1:
            return (a - 1) * J - a * (a - 1) / 2
        return (a - J - 1) / lam + m + 1 / lam**2

    def differential_cost(self, a: int, d: int) -> float:
        if d >= self.threshold(a):
            return self.m + self.f_zero(a)
        # Below threshold f only depends on a + d.
        return self.f_zero(a + d)


def solve_decoupled(lam: float, m: float, max_d1: int = 1_000_000) -> DecoupledSolution:
    """Find ``(J*, D1)`` for the decoupled model.

    Enumerates integer ``D1`` from 1 upward; for each one the charge equation
    is linear in ``J*``, and the first ``D1`` consistent with
    ``D1 = max(1, ceil(J* - 1/lam))`` is returned.
    """
    _check_rate(lam)
    if m < 0:
        raise ValueError("the service charge must be non-negative")
    inv = 1.0 / lam
    for D1 in range(1, max_d1 + 1):
        J = (m + D1 * D1 / 2 - D1 / 2 + D1 * inv - (lam - 1) * inv * inv) / (D1 - 1 + inv)
        if J > 0 and max(1, _ceil(J - inv)) == D1:
            return DecoupledSolution(lam=float(lam), m=float(m), J_star=J, D1=D1)
    raise RuntimeError(f"no consistent (J*, D1) for lam={lam}, m={m} with D1 <= {max_d1}")


def whittle_threshold_policy(sol: DecoupledSolution, state: TerminalState) -> bool:
    """True to schedule, False to idle."""
    return sol.schedules(state.a, state.d)
