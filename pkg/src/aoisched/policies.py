"""Centralized slot schedulers for :func:`aoisched.core.run_slots`.

All policies break ties toward the lowest terminal id.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .core import Decision, Network, SpecTable, TerminalSpec
from .indices import bernoulli_index, periodic_index, terminal_indices


def _table(specs) -> SpecTable:
    return specs if isinstance(specs, SpecTable) else SpecTable(specs)


def whittle_decide(net: Network, specs) -> Decision:
    """Schedule the terminal with the largest index; idle if every index is 0."""
    idx = terminal_indices(_table(specs), net.a, net.d)
    n = int(np.argmax(idx))
    return n if idx[n] > 0 else None


def no_buffer_decide(net: Network, specs) -> Decision:
    """Index policy for terminals that keep a packet for its arrival slot only."""
    table = _table(specs)
    fresh = net.has_packet & (net.a == 1)
    if not fresh.any():
        return None
    idx = np.zeros(table.n)
    b = table.bernoulli
    idx[b] = bernoulli_index(1, net.d[b], table.lam[b])
    p = table.periodic
    if p.any():
        idx[p] = periodic_index(1, net.d[p] // table.period[p], table.period[p])
    idx = np.where(fresh, idx * table.omega * (1 - table.p_e), -1.0)
    return int(np.argmax(idx))


def stationary_random_decide(net: Network, rng: np.random.Generator) -> Decision:
    backlog = np.flatnonzero(net.has_packet)
    if len(backlog) == 0:
        return None
    return int(backlog[rng.integers(len(backlog))])


def _scalar_index(a: int, d: int, lam: float) -> float:
    # Same arithmetic as indices.bernoulli_index, without numpy call overhead.
    if d > 0.5 * lam * a * a + (1.0 - 0.5 * lam) * a:
        x = (d + 0.5 * a * (a - 1.0) * lam) / (1.0 - lam + a * lam)
        return 0.5 * x * x + (1.0 / lam - 0.5) * x
    return d / lam


class WhittlePolicy:
    name = "whittle"
    drops_stale = False
    # Below this size a plain loop beats the vectorized index evaluation.
    SCALAR_MAX = 8

    def reset(self, table: SpecTable, rng: np.random.Generator) -> None:
        self.table = table
        self._scalar = table.n <= self.SCALAR_MAX and not table.periodic.any()
        if self._scalar:
            self._params = [
                (n, float(table.lam[n]), float(table.omega[n] * (1 - table.p_e[n])))
                for n in range(table.n)
            ]

    def decide(self, net: Network, slot: int) -> Decision:
        if not self._scalar:
            return whittle_decide(net, self.table)
        a, d = net.a, net.d
        best, choice = 0.0, None
        for n, lam, scale in self._params:
            dn = int(d[n])
            if dn > 0:
                v = scale * _scalar_index(int(a[n]), dn, lam)
                if v > best:
                    best, choice = v, n
        return choice


class NoBufferPolicy(WhittlePolicy):
    """Index policy where a packet not sent in its arrival slot is discarded."""

    name = "whittle_no_buffer"
    drops_stale = True

    def decide(self, net: Network, slot: int) -> Decision:
        return no_buffer_decide(net, self.table)


class RROnePolicy:
    """Round robin over one-packet buffers.

    The pointer moves past every scheduled terminal and stays put on idle
    slots; terminals with empty buffers are skipped.
    """

    name = "rr_one"
    drops_stale = False

    def reset(self, table: SpecTable, rng: np.random.Generator) -> None:
        self.n = table.n
        self.pointer = 0

    def decide(self, net: Network, slot: int) -> Decision:
        has = net.has_packet
        for k in range(self.n):
            n = (self.pointer + k) % self.n
            if has[n]:
                self.pointer = (n + 1) % self.n
                return n
        return None


class MaxAgePolicy:
    """Largest current AoI among terminals holding a packet (sanity baseline)."""

    name = "max_age"
    drops_stale = False

    def reset(self, table: SpecTable, rng: np.random.Generator) -> None:
        pass

    def decide(self, net: Network, slot: int) -> Decision:
        if not net.has_packet.any():
            return None
        return int(np.argmax(np.where(net.has_packet, net.a + net.d, -1)))


class StationaryRandomPolicy:
    name = "stationary_random"
    drops_stale = False

    def reset(self, table: SpecTable, rng: np.random.Generator) -> None:
        self.rng = rng

    def decide(self, net: Network, slot: int) -> Decision:
        return stationary_random_decide(net, self.rng)


class FixedSchedulePolicy:
    """Serve the terminal listed for ``slot % len(table)`` (``-1`` = nobody).

    A listed terminal with an empty buffer wastes its slot.
    """

    name = "fixed_schedule"
    drops_stale = False

    def __init__(self, slots: Sequence[int]):
        self.slots = np.asarray(slots, dtype=np.int64)

    def reset(self, table: SpecTable, rng: np.random.Generator) -> None:
        pass

    def decide(self, net: Network, slot: int) -> Decision:
        n = int(self.slots[slot % len(self.slots)])
        if n < 0 or not net.has_packet[n]:
            return None
        return n


class OptimalPolicy:
    """Replays the joint-MDP optimum found by :func:`aoisched.mdp.rvi_full`."""

    name = "mdp_optimal"
    drops_stale = False

    def __init__(self, solution):
        self.solution = solution

    def reset(self, table: SpecTable, rng: np.random.Generator) -> None:
        pass

    def decide(self, net: Network, slot: int) -> Decision:
        n = self.solution.action(net.a, net.d)
        return n if net.has_packet[n] else None


POLICIES = {
    "whittle": WhittlePolicy,
    "whittle_no_buffer": NoBufferPolicy,
    "rr_one": RROnePolicy,
    "max_age": MaxAgePolicy,
    "stationary_random": StationaryRandomPolicy,
}


def make_policy(kind: str, **params):
    try:
        cls = POLICIES[kind]
    except KeyError:
        raise ValueError(f"unknown policy {kind!r}; choose from {sorted(POLICIES)}") from None
    return cls(**params)
