"""Contention-based random access with multi-slot frames.

The channel alternates between one-slot contention periods and frames. In a
contention slot every eligible terminal transmits with probability ``p``:

* nobody transmits: the slot is lost and contention continues;
* exactly one terminal: it owns a transmission frame of ``T_s`` slots and its
  packet is delivered (with probability ``1 - p_e``) when the frame ends;
* two or more: a collision frame of ``T_c`` slots follows, nothing delivered.

Under IPRA a terminal is eligible when its own index reaches the public
threshold; under the ALOHA baseline every backlogged terminal is eligible. The
``centralized`` protocol is the reference: the controller picks the highest
index directly, so frames start without a contention slot.

AoI keeps growing during frames. The delivered packet is the one that won the
contention, aged by the frame length; a newer arrival during the frame waits in
the buffer and does not replace the packet on air.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .core import (
    AgeTally,
    Network,
    RunMetrics,
    SpecTable,
    TerminalSpec,
    TerminalState,
    rng_stream,
)
from .indices import terminal_indices

PROTOCOLS = ("ipra", "aloha", "centralized")


@dataclass(frozen=True)
class AccessConfig:
    p: float = 0.2
    index_threshold: float = 0.0
    T_s: int = 1
    T_c: Optional[int] = None
    delta: int = 1

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise ValueError(f"p must lie in (0, 1], got {self.p}")
        if self.index_threshold < 0 or math.isnan(self.index_threshold):
            raise ValueError("index_threshold must be non-negative")
        if int(self.T_s) < 1:
            raise ValueError("T_s must be >= 1")
        if self.T_c is None:
            # No collision detection: a collision costs a whole frame.
            object.__setattr__(self, "T_c", self.T_s)
        elif int(self.T_c) < 1:
            raise ValueError("T_c must be >= 1")
        if self.delta != 1:
            raise ValueError("contention slots are one slot long")


@dataclass(frozen=True)
class ChannelPhase:
    kind: str = "contention"
    owner: Optional[int] = None
    remaining: int = 0
    # Age of the packet on air, and whether a newer one reached the owner's buffer.
    packet_age: int = 0
    replaced: bool = False

    @staticmethod
    def contention() -> "ChannelPhase":
        return ChannelPhase()

    @staticmethod
    def transmission(owner: int, remaining: int, packet_age: int) -> "ChannelPhase":
        return ChannelPhase("transmission", owner, remaining, packet_age)

    @staticmethod
    def collision(remaining: int) -> "ChannelPhase":
        return ChannelPhase("collision", None, remaining)


def ipra_eligible(table: SpecTable, net: Network, threshold: float) -> np.ndarray:
    """Terminals that may contend. Entry n depends on terminal n's state only."""
    return net.has_packet & (terminal_indices(table, net.a, net.d) >= threshold)


def aloha_eligible(net: Network) -> np.ndarray:
    return net.has_packet.copy()


def _contend(eligible: np.ndarray, p: float, coins: np.ndarray, T_s: int, T_c: int,
             net: Network) -> ChannelPhase:
    talk = np.flatnonzero(eligible & (coins < p))
    if len(talk) == 0:
        return ChannelPhase.contention()
    if len(talk) == 1:
        n = int(talk[0])
        return ChannelPhase.transmission(n, T_s, int(net.a[n]))
    return ChannelPhase.collision(T_c)


def _frame_slot(net: Network, phase: ChannelPhase, p_e, coin: float):
    """Elapse one frame slot; returns (next phase, delivered terminal or None)."""
    phase = replace(phase, remaining=phase.remaining - 1,
                    packet_age=phase.packet_age + (phase.kind == "transmission"))
    if phase.remaining > 0:
        return phase, None
    if phase.kind == "collision":
        return ChannelPhase.contention(), None
    n = phase.owner
    if coin < p_e[n]:
        return ChannelPhase.contention(), None
    if phase.replaced:
        net.d[n] = phase.packet_age - net.a[n]
    else:
        net.deliver(n)
    return ChannelPhase.contention(), n


def _step(net, table, cfg, phase, rng, eligible_fn):
    net.begin_slot()
    if phase.kind == "contention":
        coins = rng.random(table.n)
        return _contend(eligible_fn(), cfg.p, coins, cfg.T_s, cfg.T_c, net), None
    return _frame_slot(net, phase, table.p_e, rng.random())


def apply_arrivals(net: Network, phase: ChannelPhase, mask: np.ndarray) -> ChannelPhase:
    """End-of-slot arrivals; flags the frame owner's buffer as holding a newer packet."""
    mask = np.asarray(mask, dtype=bool)
    if mask.any():
        net.arrive(mask)
        if phase.kind == "transmission" and mask[phase.owner]:
            phase = replace(phase, replaced=True)
    return phase


def ipra_step(net: Network, specs, cfg: AccessConfig, phase: ChannelPhase,
              rng: np.random.Generator):
    """Advance the channel by one slot under IPRA.

    Returns ``(next_phase, delivered)``. Arrivals are left to the caller, who
    should pass them through :func:`apply_arrivals`.
    """
    table = specs if isinstance(specs, SpecTable) else SpecTable(specs)
    return _step(net, table, cfg, phase, rng,
                 lambda: ipra_eligible(table, net, cfg.index_threshold))


def aloha_step(net: Network, specs, cfg: AccessConfig, phase: ChannelPhase,
               rng: np.random.Generator):
    """As :func:`ipra_step`, but every backlogged terminal contends."""
    table = specs if isinstance(specs, SpecTable) else SpecTable(specs)
    return _step(net, table, cfg, phase, rng, lambda: aloha_eligible(net))


def staggered_states(n: int, spacing: int) -> list[TerminalState]:
    """Empty buffers with AoI ``0, spacing, 2 * spacing, ...``.

    Contention protocols with a fixed transmit probability jam when many
    terminals become eligible together, which is exactly what an all-equal
    start produces. A staggered start mimics a network already in operation.
    """
    if n < 1 or spacing < 0:
        raise ValueError("need n >= 1 and spacing >= 0")
    return [TerminalState(a=k * spacing) for k in range(n)]


class _Feed:
    """Rows of uniforms drawn in blocks; the sequence does not depend on the block size."""

    def __init__(self, rng, width: int, block: int):
        self.rng, self.width, self.block = rng, width, block
        self.buf = np.empty((0, width))
        self.pos = 0

    def _draw(self, size: int) -> np.ndarray:
        return self.rng.random((size, self.width))

    def peek(self, k: int) -> np.ndarray:
        if len(self.buf) - self.pos < k:
            rest = self.buf[self.pos :]
            fresh = self._draw(max(self.block, k - len(rest)))
            self.buf = np.concatenate([rest, fresh]) if len(rest) else fresh
            self.pos = 0
        return self.buf[self.pos : self.pos + k]

    def take(self, k: int) -> np.ndarray:
        out = self.peek(k)
        self.pos += k
        return out


class _ArrivalFeed(_Feed):
    """Arrival masks for consecutive slots."""

    def __init__(self, rng, table: SpecTable, block: int):
        super().__init__(rng, table.n, block)
        self.table = table
        self.drawn = 0

    def _draw(self, size: int) -> np.ndarray:
        mask = self.table.arrivals(self.drawn, self.rng.random((size, self.width)))
        self.drawn += size
        return mask


def _ahead(net: Network, arr: np.ndarray):
    """States at the start of each of the next ``len(arr)`` slots if nothing is
    delivered: ``(a, d, has)`` arrays of shape (slots, terminals), post-increment."""
    k = len(arr)
    i = np.arange(k)[:, None]
    newest = np.maximum.accumulate(np.where(arr, i, -1), axis=0)
    before = np.vstack([np.full((1, arr.shape[1]), -1), newest[:-1]])
    got = before >= 0
    a = np.where(got, i - before, net.a + i + 1)
    d = np.where(got, net.h + before + 1, net.d)
    return a, d, net.has_packet | got


def _advance(net: Network, arr: np.ndarray) -> None:
    """Apply ``len(arr)`` slots without deliveries to the network state."""
    k = len(arr)
    hit = arr.any(axis=0)
    last = k - 1 - np.argmax(arr[::-1], axis=0)
    h0 = net.h
    net.d[hit] = h0[hit] + last[hit] + 1
    net.a[hit] = k - 1 - last[hit]
    net.a[~hit] += k
    net.has_packet[hit] = True


def run_access(
    specs: Sequence[TerminalSpec],
    cfg: AccessConfig,
    horizon: int,
    protocol: str = "ipra",
    seed: int = 0,
    *,
    initial: Optional[Sequence[TerminalState]] = None,
    warmup: int = 0,
    fast: bool = True,
    block: int = 4096,
) -> RunMetrics:
    """Simulate ``warmup + horizon`` slots of the channel under one access protocol.

    AoI is recorded over the last ``horizon`` slots only. ``initial`` sets the
    end-of-slot state before the first slot (default: every terminal empty
    with ``h = 0``). Contention counters cover the whole run.

    With ``fast`` the stretches where nothing can happen (inside frames, and
    contention slots with nobody eligible) are processed in bulk; the result
    is identical to the slot-by-slot run.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")
    if horizon < 1 or warmup < 0:
        raise ValueError("need horizon >= 1 and warmup >= 0")
    table = SpecTable(specs)
    n = table.n
    total = warmup + horizon
    arrivals = _ArrivalFeed(rng_stream(seed, "arrivals"), table, block)
    channel = _Feed(rng_stream(seed, "channel"), 1, block)
    contention = _Feed(rng_stream(seed, "contention"), n, block)
    net = Network(n) if initial is None else Network.from_states(initial)
    if len(net) != n:
        raise ValueError("one initial state per terminal")
    tally = AgeTally(n)
    rows = np.empty((block, n), dtype=np.int64)
    filled = 0
    deliveries = np.zeros(n, dtype=np.int64)
    attempts = np.zeros(n, dtype=np.int64)
    stats = dict(contention_slots=0, idle_contention=0, successes=0, channel_failures=0,
                 collisions=0, transmission_slots=0, collision_slots=0)
    phase = ChannelPhase.contention()
    T_s, T_c = int(cfg.T_s), int(cfg.T_c)
    threshold = cfg.index_threshold

    def eligible(a, d, has):
        if protocol == "aloha":
            return has
        idx = terminal_indices(table, a, d)
        if protocol == "ipra":
            return has & (idx >= threshold)
        return idx > 0

    def bulk(t, k):
        """Skip k slots in which no decision or delivery happens."""
        nonlocal phase
        if t >= warmup:
            h0 = net.h
            tally.add_runs(h0 + 1, h0 + k)
        arr = arrivals.take(k)
        channel.take(k)
        if phase.kind == "transmission":
            phase = replace(phase, remaining=phase.remaining - k,
                            packet_age=phase.packet_age + k,
                            replaced=phase.replaced or bool(arr[:, phase.owner].any()))
        elif phase.kind == "collision":
            phase = replace(phase, remaining=phase.remaining - k)
        _advance(net, arr)

    t = 0
    look = 16
    # After a failed look-ahead, retry only after `backoff` slots.
    backoff, wait = 1, 0
    while t < total:
        room = total - t if t >= warmup else warmup - t
        if fast and phase.kind != "contention" and phase.remaining > 1:
            k = min(phase.remaining - 1, room)
            stats[phase.kind + "_slots"] += k
            bulk(t, k)
            t += k
            continue
        if fast and phase.kind == "contention" and room > 1:
            if wait > 0:
                wait -= 1
            else:
                k = min(look, room)
                a, d, has = _ahead(net, arrivals.peek(k))
                busy = eligible(a, d, has).any(axis=1)
                quiet = int(np.argmax(busy)) if busy.any() else k
                if quiet:
                    backoff = 1
                    stats["contention_slots"] += quiet
                    stats["idle_contention"] += quiet
                    bulk(t, quiet)
                    t += quiet
                    look = min(2 * look, 1024) if quiet == k else 16
                    continue
                backoff = min(2 * backoff, 64)
                wait = backoff

        net.begin_slot()
        coin = channel.take(1)[0, 0]
        in_frame = phase.kind != "contention"
        if not in_frame:
            if protocol == "centralized":
                idx = terminal_indices(table, net.a, net.d)
                u = int(np.argmax(idx))
                if idx[u] > 0:
                    # The frame starts in this very slot.
                    phase = ChannelPhase.transmission(u, T_s, int(net.a[u]) - 1)
                    attempts[u] += 1
                    in_frame = True
            elif (elig := eligible(net.a, net.d, net.has_packet)).any():
                phase = _contend(elig, cfg.p, contention.take(1)[0], T_s, T_c, net)
                if phase.kind == "transmission":
                    attempts[phase.owner] += 1
            if not in_frame:
                stats["contention_slots"] += 1
                if phase.kind == "contention":
                    stats["idle_contention"] += 1
        if in_frame:
            kind = phase.kind
            stats[kind + "_slots"] += 1
            phase, got = _frame_slot(net, phase, table.p_e, coin)
            if phase.kind == "contention":
                if kind == "collision":
                    stats["collisions"] += 1
                elif got is None:
                    stats["channel_failures"] += 1
                else:
                    stats["successes"] += 1
                    deliveries[got] += 1
        if t >= warmup:
            np.add(net.a, net.d, out=rows[filled])
            filled += 1
            if filled == block:
                tally.add_rows(rows)
                filled = 0
        phase = apply_arrivals(net, phase, arrivals.take(1)[0])
        t += 1

    if filled:
        tally.add_rows(rows[:filled])
    stats["unfinished_slots"] = 0 if phase.kind == "contention" else (
        (T_s if phase.kind == "transmission" else T_c) - phase.remaining
    )
    return RunMetrics(
        horizon=horizon,
        omega=table.omega,
        histograms=tally.histograms(),
        sums=tally.sums,
        age_cap=tally.cap,
        deadline=table.deadline,
        deliveries=deliveries,
        attempts=attempts,
        idle_slots=stats["idle_contention"],
        stats=stats,
    )


@dataclass
class TuneResult:
    cfg: AccessConfig
    aoi: float
    evaluations: dict  # threshold -> mean AoI over the replications

    def curve(self):
        ths = sorted(self.evaluations)
        return np.array(ths), np.array([self.evaluations[t] for t in ths])


def default_threshold_grid(
    specs: Sequence[TerminalSpec], T_s: int = 1, points_per_decade: int = 4
) -> np.ndarray:
    """Log-spaced thresholds from 1 up to the index of a terminal that has
    waited a few full rounds of every terminal."""
    table = SpecTable(specs)
    gap = np.where(table.periodic, table.period, 1.0 / np.where(table.periodic, 1.0, table.lam))
    span = 4 * table.n * max(1.0, float(T_s), float(gap.max()))
    a = np.ones(table.n, dtype=np.int64)
    top = float(terminal_indices(table, a, np.full(table.n, int(span))).max())
    decades = max(1.0, math.log10(max(top, 10.0)))
    return np.geomspace(1.0, 10**decades, int(math.ceil(decades * points_per_decade)) + 1)


def tune_ipra(
    specs: Sequence[TerminalSpec],
    cfg_template: AccessConfig,
    search_grid: Optional[Sequence[float]] = None,
    horizon: int = 200_000,
    seed: int = 0,
    replications: int = 3,
    refine_steps: int = 6,
    initial: Optional[Sequence[TerminalState]] = None,
    warmup: int = 0,
    margin: float = 0.01,
    jam_ratio: float = 2.0,
    safety: float = 1.1,
) -> TuneResult:
    """One-dimensional threshold search for IPRA at fixed ``p``.

    Golden-section search over the indices of a log-spaced grid, then a few
    golden-section steps in log space between the best point's neighbours.
    Every candidate is scored on the same seeds.

    Thresholds that are too low jam the channel, and all of them score about
    the same. A comparison therefore favours the smaller threshold only when
    it is better by more than ``margin`` (relative).

    The jam is absorbing and sets in abruptly just below the best threshold,
    so a short tuning run can score a threshold that jams later in a longer
    one. When some smaller threshold scored worse than ``jam_ratio`` times the
    best, the result is moved up by the factor ``safety``.
    """
    if jam_ratio <= 1 or safety < 1:
        raise ValueError("need jam_ratio > 1 and safety >= 1")
    grid = np.asarray(
        default_threshold_grid(specs, cfg_template.T_s) if search_grid is None else search_grid,
        dtype=float,
    )
    if grid.ndim != 1 or len(grid) == 0 or np.any(grid < 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("search grid must be a non-empty increasing list of thresholds >= 0")
    seeds = [seed + r for r in range(replications)]
    cache: dict = {}

    def score(th: float) -> float:
        th = float(f"{th:.10g}")
        if th not in cache:
            cfg = replace(cfg_template, index_threshold=th)
            cache[th] = float(np.mean([
                run_access(specs, cfg, horizon, "ipra", s, initial=initial, warmup=warmup).mean_aoi
                for s in seeds
            ]))
        return cache[th]

    def left_wins(x1: float, x2: float) -> bool:
        return score(x1) < (1.0 - margin) * score(x2)

    invphi = (math.sqrt(5) - 1) / 2
    lo, hi = 0, len(grid) - 1
    while hi - lo > 2:
        x1 = hi - int(round(invphi * (hi - lo)))
        x2 = lo + int(round(invphi * (hi - lo)))
        if x1 >= x2:
            x1, x2 = lo + (hi - lo) // 2, lo + (hi - lo) // 2 + 1
        if left_wins(grid[x1], grid[x2]):
            hi = x2
        else:
            lo = x1
    best = min(range(lo, hi + 1), key=lambda i: score(grid[i]))

    if refine_steps and len(grid) > 1 and grid[0] > 0:
        u, v = math.log(grid[max(best - 1, 0)]), math.log(grid[min(best + 1, len(grid) - 1)])
        for _ in range(refine_steps):
            if v - u < 1e-6:
                break
            x1, x2 = v - invphi * (v - u), u + invphi * (v - u)
            if left_wins(math.exp(x1), math.exp(x2)):
                v = x2
            else:
                u = x1
    th = min(cache, key=cache.get)
    if safety > 1 and any(t < th and v > jam_ratio * cache[th] for t, v in cache.items()):
        th = float(f"{th * safety:.10g}")
        score(th)
    return TuneResult(replace(cfg_template, index_threshold=th), cache[th], dict(cache))
