"""Relative value iteration oracles for the decoupled and the full scheduling MDP.

States of one terminal live on a truncated grid ``a in 1..A_max``,
``d in 0..D_max``; transitions that leave the grid are folded onto its edge
(``a`` and ``d`` are capped). Each terminal ("arm") is described by two
kernels, ``idle`` (no delivery) and ``served`` (successful delivery), and the
joint kernel of the full MDP is their product, applied axis by axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .core import TerminalSpec
from .indices import index_bernoulli, index_periodic

RVI_TOL = 1e-8
MAX_ITER = 1_000_000
# Damping keeps RVI from oscillating on periodic chains (e.g. lam = 1).
DAMPING = 0.5


class ConvergenceError(RuntimeError):
    pass


@dataclass
class _Arm:
    A: int
    D: int
    cost: np.ndarray  # a + d on the flat grid
    d: np.ndarray
    idle: list  # [(prob, flat successor index)]
    served: list

    @property
    def size(self) -> int:
        return self.A * (self.D + 1)


def _flat(a, d, D):
    return (a - 1) * (D + 1) + d


def _bernoulli_arm(lam: float, A: int, D: int) -> _Arm:
    a, d = np.meshgrid(np.arange(1, A + 1), np.arange(D + 1), indexing="ij")
    a, d = a.ravel(), d.ravel()
    older = np.minimum(a + 1, A)
    idle, served = [], []
    if lam < 1:
        idle.append((1 - lam, _flat(older, d, D)))
        served.append((1 - lam, _flat(older, 0, D)))
    if lam > 0:
        idle.append((lam, _flat(1, np.minimum(d + a, D), D)))
        served.append((lam, _flat(1, np.minimum(a, D), D)))
    return _Arm(A, D, (a + d).astype(float), d.astype(float), idle, served)


def _periodic_arm(period: int, D: int) -> _Arm:
    A = period
    a, d = np.meshgrid(np.arange(1, A + 1), np.arange(D + 1), indexing="ij")
    a, d = a.ravel(), d.ravel()
    wraps = a == A
    idle = np.where(wraps, _flat(1, np.minimum(d + a, D), D), _flat(np.minimum(a + 1, A), d, D))
    served = np.where(wraps, _flat(1, min(A, D), D), _flat(np.minimum(a + 1, A), 0, D))
    return _Arm(A, D, (a + d).astype(float), d.astype(float), [(1.0, idle)], [(1.0, served)])


def _apply(F: np.ndarray, branches, axis: int) -> np.ndarray:
    out = None
    for prob, succ in branches:
        term = prob * np.take(F, succ, axis=axis)
        out = term if out is None else out + term
    return out


def _iterate(step, size: int, tol: float, max_iter: int, f0=None):
    """Damped RVI on ``size`` states; ``step(f)`` returns the per-action Q arrays.

    State 0 is the reference state, pinned to ``f = 0``.
    """
    f = np.zeros(size) if f0 is None else np.array(f0, dtype=float).ravel()
    for it in range(1, max_iter + 1):
        qs = step(f)
        Tf = np.min(qs, axis=0)
        diff = Tf - f
        span = float(diff.max() - diff.min())
        if span < tol:
            J = 0.5 * float(diff.max() + diff.min())
            return J, f, qs, span, it
        f = f + DAMPING * diff
        f -= f[0]
    raise ConvergenceError(f"RVI did not converge in {max_iter} iterations (span {span:.3e})")


@dataclass
class RviResult:
    """Average cost ``J``, differential cost ``f`` (``f`` at the reference state
    is 0) and the greedy policy. For single-terminal problems arrays are indexed
    ``[a - 1, d]``."""

    J: float
    f: np.ndarray
    q: np.ndarray
    policy: np.ndarray
    residual: float
    iterations: int

    @property
    def advantage(self) -> np.ndarray:
        """Idle cost minus schedule cost (single terminal); positive means schedule."""
        return self.q[0] - self.q[1]

    @property
    def schedule(self) -> np.ndarray:
        return self.policy == 1

    def thresholds(self) -> np.ndarray:
        """Smallest scheduled d for every a (``D_max + 1`` if never scheduled)."""
        sched = self.schedule
        first = np.argmax(sched, axis=1)
        return np.where(sched.any(axis=1), first, sched.shape[1])

    def is_threshold(self) -> bool:
        sched = self.schedule
        d = np.arange(sched.shape[1])
        return bool(np.all(sched == (d[None, :] >= self.thresholds()[:, None])))


def _decoupled_policy(qs: np.ndarray, tie: float) -> np.ndarray:
    # Exact ties between idle and schedule are resolved toward scheduling,
    # matching the "d >= D_a" convention of the threshold policy.
    return (qs[1] <= qs[0] + tie).astype(np.int8)


def default_a_max(lam: float, tail: float = 1e-10, floor: int = 8) -> int:
    """Cap on the packet age so the probability of reaching it is below ``tail``."""
    if lam >= 1:
        return floor
    return max(floor, int(math.ceil(math.log(tail) / math.log(1 - lam))) + 1)


def rvi_decoupled(
    lam: float,
    m: float,
    A_max: Optional[int] = None,
    D_max: Optional[int] = None,
    tol: float = RVI_TOL,
    p_e: float = 0.0,
    max_iter: int = MAX_ITER,
    f0: Optional[np.ndarray] = None,
) -> RviResult:
    """Solve the single-terminal model with service charge ``m`` by RVI.

    ``D_max`` defaults to ``ceil(m) + 2``: every state with ``d >= m`` is
    in the schedule region, where ``f`` no longer depends on ``d``.
    """
    if not 0 < lam <= 1:
        raise ValueError("need 0 < lam <= 1")
    if m < 0 or tol <= 0:
        raise ValueError("need m >= 0 and tol > 0")
    A = A_max or default_a_max(lam)
    D = D_max if D_max is not None else int(math.ceil(m / (1 - p_e))) + 2
    arm = _bernoulli_arm(lam, A, D)
    c_idle = arm.cost
    c_sched = arm.cost - (1 - p_e) * arm.d + m

    def step(f):
        nxt_idle = _apply(f, arm.idle, 0)
        nxt_served = _apply(f, arm.served, 0)
        if p_e:
            nxt_served = (1 - p_e) * nxt_served + p_e * nxt_idle
        return np.stack([c_idle + nxt_idle, c_sched + nxt_served])

    J, f, qs, span, it = _iterate(step, arm.size, tol, max_iter, f0)
    shape = (A, D + 1)
    tie = 1e-6 + 1e-9 * float(np.abs(f).max())
    return RviResult(
        J=J,
        f=f.reshape(shape),
        q=qs.reshape((2,) + shape),
        policy=_decoupled_policy(qs, tie).reshape(shape),
        residual=span,
        iterations=it,
    )


def rvi_periodic(
    period: int, m: float, D_max: Optional[int] = None, tol: float = RVI_TOL,
    max_iter: int = MAX_ITER,
) -> RviResult:
    """Single-terminal model with one arrival every ``period`` slots."""
    D = D_max if D_max is not None else period * (int(m // period) + 4)
    arm = _periodic_arm(period, D)
    c_sched = arm.cost - arm.d + m

    def step(f):
        return np.stack([arm.cost + _apply(f, arm.idle, 0), c_sched + _apply(f, arm.served, 0)])

    J, f, qs, span, it = _iterate(step, arm.size, tol, max_iter)
    shape = (arm.A, D + 1)
    tie = 1e-6 + 1e-9 * float(np.abs(f).max())
    return RviResult(J, f.reshape(shape), qs.reshape((2,) + shape),
                     _decoupled_policy(qs, tie).reshape(shape), span, it)


def _flip(advantage, lo: float, hi: float, tol: float) -> float:
    """Root of a decreasing advantage(m), widening the bracket if needed."""
    for _ in range(8):
        if advantage(hi) < 0:
            return brentq(advantage, lo, hi, xtol=tol)
        lo, hi = hi, 2 * hi + 10
    raise RuntimeError("optimal action does not flip inside the charge bracket")


def indifference_charge(lam: float, a: int, d: int, tol: float = 1e-6, A_max=None) -> float:
    """Numeric Whittle index: the charge where idling and scheduling ``(a, d)``
    cost the same in the decoupled RVI solution."""
    if a < 1 or d < 0:
        raise ValueError("need a >= 1 and d >= 0")
    if d == 0:
        return 0.0
    def advantage(m):
        D = max(int(math.ceil(m)) + 2, d + 1)
        res = rvi_decoupled(lam, m, A_max=A_max, D_max=D, tol=1e-10)
        return float(res.advantage[a - 1, d])

    return _flip(advantage, 0.0, 4 * index_bernoulli(a, d, lam) + 10, tol)


def periodic_indifference_charge(period: int, a: int, n_p: int, tol: float = 1e-6) -> float:
    if not 1 <= a <= period:
        raise ValueError("need 1 <= a <= period")
    if n_p == 0:
        return 0.0
    d = n_p * period

    def advantage(m):
        res = rvi_periodic(period, m, D_max=period * (int(m // period) + n_p + 4), tol=1e-10)
        return float(res.advantage[a - 1, d])

    return _flip(advantage, 0.0, 4 * index_periodic(a, n_p, period) + 10, tol)


@dataclass
class FullSolution(RviResult):
    """Solution of the joint N-terminal MDP.

    ``policy`` holds the scheduled terminal for every joint state, indexed
    ``[a_1 - 1, d_1, a_2 - 1, d_2, ...]``; ``J`` is per terminal.
    """

    arms: tuple = ()

    def action(self, a: Sequence[int], d: Sequence[int]) -> int:
        idx = []
        for arm, ai, di in zip(self.arms, a, d):
            idx += [min(max(int(ai), 1), arm.A) - 1, min(int(di), arm.D)]
        return int(self.policy[tuple(idx)])


def _arm_for(spec: TerminalSpec, A_max: Optional[int], D_max: int) -> _Arm:
    if spec.periodic:
        return _periodic_arm(int(spec.period), D_max)
    if spec.lam == 0:
        raise ValueError("terminals without arrivals are not supported")
    return _bernoulli_arm(spec.lam, A_max or default_a_max(spec.lam, tail=1e-8), D_max)


def rvi_full(
    specs: Sequence[TerminalSpec],
    A_max=None,
    D_max=40,
    tol: float = RVI_TOL,
    max_states: int = 6_000_000,
    max_iter: int = MAX_ITER,
) -> FullSolution:
    """Optimal centralized schedule of a small network by RVI.

    ``A_max`` / ``D_max`` may be scalars or one value per terminal. The
    per-slot cost is the weighted post-transmission AoI averaged over
    terminals, so ``J`` is directly comparable with ``RunMetrics.mean_aoi``.
    """
    n = len(specs)
    if n < 1:
        raise ValueError("need at least one terminal")
    As = A_max if isinstance(A_max, (list, tuple)) else [A_max] * n
    Ds = D_max if isinstance(D_max, (list, tuple)) else [D_max] * n
    arms = tuple(_arm_for(s, A, D) for s, A, D in zip(specs, As, Ds))
    sizes = [arm.size for arm in arms]
    total = int(np.prod(sizes))
    if total > max_states:
        raise MemoryError(f"joint state space {total} exceeds budget {max_states}")

    def along(vec, j):
        shape = [1] * n
        shape[j] = sizes[j]
        return vec.reshape(shape)

    omega = [s.omega for s in specs]
    base = sum(omega[j] * along(arms[j].cost, j) for j in range(n)) / n
    costs = [
        (base - omega[j] * (1 - specs[j].p_e) * along(arms[j].d, j) / n).ravel()
        for j in range(n)
    ]

    def step(f):
        F = f.reshape(sizes)
        qs = []
        for j in range(n):
            pe = specs[j].p_e
            G = _apply(F, arms[j].served, j)
            if pe:
                G = (1 - pe) * G + pe * _apply(F, arms[j].idle, j)
            for k in range(n):
                if k != j:
                    G = _apply(G, arms[k].idle, k)
            qs.append(costs[j] + G.ravel())
        return np.stack(qs)

    J, f, qs, span, it = _iterate(step, total, tol, max_iter)
    return FullSolution(
        J=J,
        f=f.reshape(_grid_shape(arms)),
        q=qs,
        policy=np.argmin(qs, axis=0).reshape(_grid_shape(arms)),
        residual=span,
        iterations=it,
        arms=arms,
    )


def _grid_shape(arms) -> tuple:
    shape = ()
    for arm in arms:
        shape += (arm.A, arm.D + 1)
    return shape
