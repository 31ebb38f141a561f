"""Terminal model, arrival and channel processes, and the slot-level engine.

Every slot runs the same sequence for every terminal:

    increment (a, h += 1) -> decide -> transmit -> sample AoI -> arrivals

The per-terminal state is kept as ``(a, d)`` with ``h = a + d``: ``a`` is the
queuing delay of the buffered packet and ``d`` the AoI reduction a delivery
would bring. While the buffer is empty ``d == 0`` and ``a`` tracks ``h``.
"""

from __future__ import annotations

import math
import operator
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

# Independent random streams; the integer is the SeedSequence spawn key.
STREAM_IDS = {"arrivals": 0, "channel": 1, "policy": 2, "contention": 3}

Decision = Optional[int]


class PolicyError(RuntimeError):
    """A policy produced a decision the channel model cannot execute."""


def rng_stream(seed: int, stream: str) -> np.random.Generator:
    """Generator for one named stream; same (seed, stream) gives the same draws."""
    key = STREAM_IDS[stream]
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))


@dataclass(frozen=True)
class TerminalSpec:
    """Static parameters of one terminal.

    Exactly one of ``lam`` (Bernoulli arrivals) or ``period`` (one packet every
    ``period`` slots) is set. ``phase`` only matters for periodic terminals and
    defaults to ``id % period``.
    """

    id: int = 0
    lam: Optional[float] = None
    period: Optional[int] = None
    omega: float = 1.0
    p_e: float = 0.0
    deadline: Optional[int] = None
    epsilon: Optional[float] = None
    phase: Optional[int] = None

    def __post_init__(self):
        if (self.lam is None) == (self.period is None):
            raise ValueError("exactly one of lam / period must be given")
        if self.lam is not None and not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")
        if self.period is not None and int(self.period) < 1:
            raise ValueError(f"period must be >= 1, got {self.period}")
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if not 0.0 <= self.p_e < 1.0:
            raise ValueError(f"p_e must lie in [0, 1), got {self.p_e}")
        if self.deadline is not None and self.deadline < 1:
            raise ValueError("deadline must be >= 1 slot")
        if self.epsilon is not None and not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")

    @property
    def periodic(self) -> bool:
        return self.period is not None

    @property
    def arrival_phase(self) -> int:
        if self.period is None:
            return 0
        return (self.id if self.phase is None else self.phase) % self.period


def symmetric_specs(n: int, lam: float, **kwargs) -> list[TerminalSpec]:
    return [TerminalSpec(id=i, lam=lam, **kwargs) for i in range(n)]


@dataclass(frozen=True)
class TerminalState:
    a: int
    d: int = 0
    has_packet: bool = False

    @property
    def h(self) -> int:
        return self.a + self.d

    def periods_since_update(self, period: int) -> int:
        """Whole arrival periods since the last delivered update (periodic arrivals)."""
        return self.d // period


def slot_begin(state: TerminalState) -> TerminalState:
    return TerminalState(state.a + 1, state.d, state.has_packet)


def apply_delivery(state: TerminalState) -> TerminalState:
    if not state.has_packet:
        raise PolicyError("delivery from an empty buffer")
    return TerminalState(state.a, 0, False)


def apply_arrival(state: TerminalState, arrived: bool) -> TerminalState:
    """Put a new packet in the buffer, replacing any older one.

    The returned state is the end-of-slot state; the new packet reaches
    ``a == 1`` at the next :func:`slot_begin`.
    """
    if not arrived:
        return state
    return TerminalState(0, state.a + state.d, True)


class SpecTable:
    """Column view of a list of :class:`TerminalSpec` used by the vectorized code."""

    def __init__(self, specs: Sequence[TerminalSpec]):
        if len(specs) == 0:
            raise ValueError("need at least one terminal")
        self.specs = list(specs)
        self.n = len(specs)
        self.periodic = np.array([s.periodic for s in specs], dtype=bool)
        self.lam = np.array([np.nan if s.periodic else s.lam for s in specs], dtype=float)
        self.period = np.array([s.period or 0 for s in specs], dtype=np.int64)
        self.phase = np.array([s.arrival_phase for s in specs], dtype=np.int64)
        self.omega = np.array([s.omega for s in specs], dtype=float)
        self.p_e = np.array([s.p_e for s in specs], dtype=float)
        self.deadline = np.array(
            [np.inf if s.deadline is None else s.deadline for s in specs], dtype=float
        )
        self.bernoulli = ~self.periodic
        self.weight = self.omega * (1.0 - self.p_e)
        # Bernoulli threshold per column; periodic columns never fire through it.
        self._lam_row = np.where(self.periodic, -1.0, self.lam)

    def arrivals(self, start: int, uniforms: np.ndarray) -> np.ndarray:
        """Arrival mask for ``len(uniforms)`` consecutive slots starting at ``start``.

        ``uniforms`` has one row per slot and one column per terminal; periodic
        terminals ignore their column so the stream consumption never changes.
        """
        mask = uniforms < self._lam_row
        if self.periodic.any():
            t = np.arange(start, start + len(uniforms))[:, None]
            cols = np.flatnonzero(self.periodic)
            mask[:, cols] = (t - self.phase[cols]) % self.period[cols] == 0
        return mask


class Network:
    """Mutable per-terminal state arrays shared by the engines and policies."""

    def __init__(self, n: int):
        self.a = np.zeros(n, dtype=np.int64)
        self.d = np.zeros(n, dtype=np.int64)
        self.has_packet = np.zeros(n, dtype=bool)

    @classmethod
    def from_states(cls, states: Sequence[TerminalState]) -> "Network":
        net = cls(len(states))
        for i, s in enumerate(states):
            net.a[i], net.d[i], net.has_packet[i] = s.a, s.d, s.has_packet
        return net

    def __len__(self) -> int:
        return len(self.a)

    @property
    def h(self) -> np.ndarray:
        return self.a + self.d

    def state(self, n: int) -> TerminalState:
        return TerminalState(int(self.a[n]), int(self.d[n]), bool(self.has_packet[n]))

    def states(self) -> list[TerminalState]:
        return [self.state(n) for n in range(len(self))]

    def begin_slot(self) -> None:
        self.a += 1

    def deliver(self, n: int) -> None:
        if not self.has_packet[n]:
            raise PolicyError(f"terminal {n} scheduled with an empty buffer")
        self.d[n] = 0
        self.has_packet[n] = False

    def arrive(self, mask: np.ndarray) -> None:
        self.d[mask] += self.a[mask]
        self.a[mask] = 0
        self.has_packet[mask] = True

    def drop_buffers(self) -> None:
        held = self.has_packet
        self.a[held] += self.d[held]
        self.d[held] = 0
        self.has_packet[:] = False


class AgeTally:
    """Per-terminal histogram of sampled AoI values.

    Values of ``cap`` and above share the last bin; exact per-terminal sums
    are kept on the side so means are exact regardless.
    """

    def __init__(self, n: int, size: int = 256, cap: int = 1 << 16):
        self.n = n
        self.cap = cap
        self.size = min(size, cap + 1)
        self.counts = np.zeros((n, self.size), dtype=np.int64)
        self.ramps = np.zeros((n, self.size + 1), dtype=np.int64)
        self.sums = np.zeros(n, dtype=np.int64)

    def _fit(self, top: int) -> None:
        top = min(top, self.cap)
        if top < self.size:
            return
        size = self.size
        while size <= top:
            size *= 2
        size = min(size, self.cap + 1)
        grown = np.zeros((self.n, size), dtype=np.int64)
        grown[:, : self.size] = self.counts
        ramps = np.zeros((self.n, size + 1), dtype=np.int64)
        ramps[:, : self.size + 1] = self.ramps
        self.counts, self.ramps, self.size = grown, ramps, size

    def add_rows(self, rows: np.ndarray) -> None:
        """Count a (slots x terminals) block of AoI samples."""
        if rows.size == 0:
            return
        self.sums += rows.sum(axis=0)
        top = int(rows.max())
        if top >= self.cap:
            rows = np.minimum(rows, self.cap)
        self._fit(top)
        flat = rows + np.arange(self.n) * self.size
        self.counts += np.bincount(flat.ravel(), minlength=self.n * self.size).reshape(
            self.n, self.size
        )

    def add_runs(self, lo: np.ndarray, hi: np.ndarray) -> None:
        """Count every integer in ``[lo[n], hi[n]]`` once for each terminal n."""
        keep = hi >= lo
        if not keep.any():
            return
        self.sums += np.where(keep, (lo + hi) * (hi - lo + 1) // 2, 0)
        cap = self.cap
        over = np.where(keep, np.maximum(0, hi - np.maximum(lo, cap) + 1), 0)
        if over.any():
            self._fit(cap)
            self.counts[:, cap] += over
            hi = np.minimum(hi, cap - 1)
            keep &= hi >= lo
            if not keep.any():
                return
        self._fit(int(hi[keep].max()))
        rows = np.flatnonzero(keep)
        np.add.at(self.ramps, (rows, lo[keep]), 1)
        np.add.at(self.ramps, (rows, hi[keep] + 1), -1)

    def histograms(self) -> np.ndarray:
        return self.counts + np.cumsum(self.ramps[:, :-1], axis=1)


@dataclass
class RunMetrics:
    """Outcome of one simulated run.

    ``mean_aoi`` is ``sum_t sum_n omega_n h_n(t) / (T N)`` with ``h`` sampled
    once per slot after the transmission stage.
    """

    horizon: int
    omega: np.ndarray
    histograms: np.ndarray
    deadline: np.ndarray
    deliveries: np.ndarray
    attempts: np.ndarray
    idle_slots: int
    stats: dict = field(default_factory=dict)
    trace: Optional[dict] = None
    # Exact AoI sums per terminal; needed once the histogram is capped.
    sums: Optional[np.ndarray] = None
    age_cap: Optional[int] = None

    @property
    def n_terminals(self) -> int:
        return len(self.omega)

    @property
    def terminal_mean(self) -> np.ndarray:
        if self.sums is not None:
            return self.sums / self.horizon
        ages = np.arange(self.histograms.shape[1])
        return self.histograms @ ages / self.horizon

    @property
    def mean_aoi(self) -> float:
        return float(self.omega @ self.terminal_mean / self.n_terminals)

    @property
    def violation_freq(self) -> np.ndarray:
        """Fraction of slots with ``h > H`` per terminal (nan without a deadline)."""
        out = np.full(self.n_terminals, np.nan)
        for n, H in enumerate(self.deadline):
            if math.isfinite(H):
                out[n] = self.tail(n, int(H))
        return out

    def tail(self, n: int, x: int) -> float:
        """Empirical ``Pr{h > x}`` of terminal n."""
        if self.age_cap is not None and x >= self.age_cap:
            raise ValueError(f"AoI above {self.age_cap} is not resolved")
        return float(self.histograms[n, x + 1 :].sum() / self.horizon)

    def cdf(self, n: int, xs) -> np.ndarray:
        c = np.cumsum(self.histograms[n]) / self.horizon
        xs = np.asarray(xs, dtype=np.int64)
        if self.age_cap is not None and np.any(xs >= self.age_cap):
            raise ValueError(f"AoI above {self.age_cap} is not resolved")
        return np.where(xs >= len(c), 1.0, c[np.minimum(xs, len(c) - 1)])

    def summary(self) -> dict:
        out = {
            "mean_aoi": self.mean_aoi,
            "idle_slots": self.idle_slots,
            "deliveries": int(self.deliveries.sum()),
        }
        out.update(self.stats)
        return out


class Policy(Protocol):
    name: str
    drops_stale: bool

    def reset(self, table: SpecTable, rng: np.random.Generator) -> None: ...

    def decide(self, net: Network, slot: int) -> Decision: ...


def check_decision(u, n: int) -> Decision:
    """Normalise a policy output to ``None`` or one terminal id."""
    if u is None:
        return None
    if isinstance(u, (list, tuple, np.ndarray)):
        if len(u) > 1:
            raise PolicyError(f"{len(u)} terminals scheduled in one slot")
        return check_decision(u[0], n) if len(u) else None
    try:
        u = operator.index(u)
    except TypeError:
        raise PolicyError(f"invalid decision {u!r}") from None
    if not 0 <= u < n:
        raise PolicyError(f"scheduled terminal {u} out of range")
    return u


def run_slots(
    specs: Sequence[TerminalSpec],
    policy: Policy,
    horizon: int,
    seed: int = 0,
    *,
    record_trace: bool = False,
    block: int = 4096,
) -> RunMetrics:
    """Simulate ``horizon`` slots of centralized scheduling."""
    if horizon < 1:
        raise ValueError("horizon must be at least one slot")
    table = SpecTable(specs)
    n = table.n
    rng_arr = rng_stream(seed, "arrivals")
    rng_ch = rng_stream(seed, "channel")
    policy.reset(table, rng_stream(seed, "policy"))

    net = Network(n)
    a, d, has = net.a, net.d, net.has_packet
    p_e = table.p_e
    drops = getattr(policy, "drops_stale", False)
    tally = AgeTally(n)
    deliveries = np.zeros(n, dtype=np.int64)
    attempts = np.zeros(n, dtype=np.int64)
    idle = 0
    if record_trace:
        tr_h = np.empty((horizon, n), dtype=np.int64)
        tr_u = np.full(horizon, -1, dtype=np.int64)
        tr_ok = np.zeros(horizon, dtype=bool)

    for start in range(0, horizon, block):
        size = min(block, horizon - start)
        arrivals = table.arrivals(start, rng_arr.random((size, n)))
        coins = rng_ch.random(size)
        rows = np.empty((size, n), dtype=np.int64)
        for i in range(size):
            t = start + i
            a += 1
            u = check_decision(policy.decide(net, t), n)
            if u is None:
                idle += 1
            else:
                if not has[u]:
                    raise PolicyError(f"{policy.name}: terminal {u} has no packet (slot {t})")
                attempts[u] += 1
                if coins[i] >= p_e[u]:
                    d[u] = 0
                    has[u] = False
                    deliveries[u] += 1
                    if record_trace:
                        tr_ok[t] = True
                if record_trace:
                    tr_u[t] = u
            np.add(a, d, out=rows[i])
            if drops and has.any():
                net.drop_buffers()
            arr = arrivals[i]
            if arr.any():
                d[arr] += a[arr]
                a[arr] = 0
                has[arr] = True
        tally.add_rows(rows)
        if record_trace:
            tr_h[start : start + size] = rows

    trace = None
    if record_trace:
        trace = {"h": tr_h, "scheduled": tr_u, "delivered": tr_ok}
    return RunMetrics(
        horizon=horizon,
        omega=table.omega,
        histograms=tally.histograms(),
        sums=tally.sums,
        age_cap=tally.cap,
        deadline=table.deadline,
        deliveries=deliveries,
        attempts=attempts,
        idle_slots=idle,
        trace=trace,
    )
