"""Transmission schedule, constant-delay transport, drop models, and
average-data-rate accounting.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InsufficientDataError


@dataclass(frozen=True)
class Schedule:
    """Strictly increasing transmission times with gaps in [gap_min, gap_max]."""

    gap_min: float
    gap_max: float
    mode: str  # 'periodic' | 'jittered'
    times: np.ndarray
    period: float | None = None
    seed: int | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", t)
        if t.size >= 2:
            gaps = np.diff(t)
            if np.any(gaps < self.gap_min - 1e-9) or np.any(gaps > self.gap_max + 1e-9):
                raise ConfigError("schedule gaps leave [gap_min, gap_max]")


def generate_schedule(
    gap_min: float,
    gap_max: float,
    mode: str,
    horizon: float,
    step: float,
    period: float | None = None,
    seed: int | None = None,
    t0: float = 0.0,
) -> Schedule:
    """Sampling times on the integration grid, from t0 through the horizon.

    Periodic mode repeats ``period`` (default gap_min); jittered mode draws
    gaps uniformly from [gap_min, gap_max] with a seeded generator and snaps
    them to the grid.
    """
    if not 0 < gap_min <= gap_max:
        raise ConfigError("need 0 < gap_min <= gap_max")
    if step <= 0 or horizon <= 0:
        raise ConfigError("step and horizon must be positive")
    if mode == "periodic":
        period = gap_min if period is None else float(period)
        if not gap_min - 1e-12 <= period <= gap_max + 1e-12:
            raise ConfigError("period must lie in [gap_min, gap_max]")
        steps = period / step
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigError(f"period {period} is not a multiple of the step {step}")
        times = t0 + period * np.arange(int(np.floor((horizon - t0) / period + 1e-9)) + 1)
        return Schedule(gap_min, gap_max, mode, times, period=period, seed=seed)
    if mode == "jittered":
        if seed is None:
            raise ConfigError("jittered schedule needs a seed")
        lo = int(np.ceil(gap_min / step - 1e-9))
        hi = int(np.floor(gap_max / step + 1e-9))
        if lo > hi or lo < 1:
            raise ConfigError("no grid multiple lies inside [gap_min, gap_max]")
        rng = np.random.Generator(np.random.PCG64(seed))
        times = [t0]
        while True:
            gap = step * int(np.clip(round(rng.uniform(gap_min, gap_max) / step), lo, hi))
            if times[-1] + gap > horizon + 1e-9:
                break
            times.append(times[-1] + gap)
        return Schedule(gap_min, gap_max, mode, np.array(times), seed=seed)
    raise ConfigError(f"unknown schedule mode {mode!r}")


# -- drop models ----------------------------------------------------------------


class DropModel:
    """Deterministic drop decision per sample index, known to both sides."""

    max_consecutive: int | None = 0

    def dropped(self, k: int) -> bool:
        raise NotImplementedError


class NoDrop(DropModel):
    max_consecutive = 0

    def dropped(self, k: int) -> bool:
        return False

    def describe(self) -> str:
        return "none"


class PatternDrop(DropModel):
    """Cyclic boolean pattern; True entries are dropped."""

    def __init__(self, pattern):
        self.pattern = [bool(b) for b in pattern]
        if not self.pattern:
            raise ConfigError("drop pattern must be nonempty")
        if all(self.pattern):
            raise ConfigError("drop pattern discards every sample")
        run = best = 0
        for b in self.pattern + self.pattern:  # wraparound runs
            run = run + 1 if b else 0
            best = max(best, run)
        self.max_consecutive = best

    def dropped(self, k: int) -> bool:
        return self.pattern[k % len(self.pattern)]

    def describe(self) -> str:
        return f"pattern({''.join('d' if b else 'k' for b in self.pattern)})"


class BernoulliDrop(DropModel):
    """Seeded independent drops with a hard cap on consecutive losses."""

    def __init__(self, p: float, seed: int, max_consecutive: int):
        if not 0 <= p < 1:
            raise ConfigError("drop probability must be in [0, 1)")
        if max_consecutive < 0:
            raise ConfigError("max_consecutive must be >= 0")
        self.p = p
        self.seed = seed
        self.max_consecutive = max_consecutive
        self._rng = np.random.Generator(np.random.PCG64(seed))
        self._decisions: list[bool] = []
        self._run = 0

    def dropped(self, k: int) -> bool:
        while len(self._decisions) <= k:
            d = bool(self._rng.uniform() < self.p) and self._run < self.max_consecutive
            self._run = self._run + 1 if d else 0
            self._decisions.append(d)
        return self._decisions[k]

    def describe(self) -> str:
        return f"bernoulli(p={self.p}, seed={self.seed}, cap={self.max_consecutive})"


def apply_drop(model: DropModel, pkt) -> bool:
    """True when the packet survives the channel."""
    return not model.dropped(pkt.k)


# -- transport -------------------------------------------------------------------


@dataclass
class ChannelModel:
    """FIFO transport with constant delay and synchronized drops.

    A dropped index is skipped by both endpoints (no packet, no cell update),
    so the effective inter-update gap is bounded by
    (max_consecutive + 1) * gap_max.
    """

    schedule: Schedule
    delay: float
    drop: DropModel = field(default_factory=NoDrop)
    in_flight: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.delay < 0:
            raise ConfigError("delay must be >= 0")

    def effective_gap_bound(self) -> float:
        d = self.drop.max_consecutive
        if d is None:
            raise ConfigError("drop model has no consecutive-loss bound")
        return (d + 1) * self.schedule.gap_max

    def send(self, pkt, extra=None) -> bool:
        """Enqueue unless dropped; returns True when transmitted."""
        if self.drop.dropped(pkt.k):
            return False
        self.in_flight.append((pkt.t_sent + self.delay, pkt, extra))
        return True

    def due(self, t: float, tol: float = 1e-9):
        """Pop all packets whose delivery time equals t (FIFO order)."""
        out = []
        while self.in_flight and self.in_flight[0][0] <= t + tol:
            out.append(self.in_flight.popleft())
        return out


# -- rate accounting ---------------------------------------------------------------


@dataclass(frozen=True)
class RateAccount:
    bits_sent: int
    t_first: float
    t_last: float
    rate: float


def measure_rate(packets) -> RateAccount:
    """Average data rate over the realized horizon.

    Bits of packets after the first, divided by the spanned time, so a
    periodic schedule with gap T reports exactly (bits per sample) / T.
    """
    if len(packets) < 2:
        raise InsufficientDataError("need at least 2 packets to measure a rate")
    t_first = packets[0].t_sent
    t_last = packets[-1].t_sent
    total = int(sum(p.bits for p in packets))
    tail = total - packets[0].bits
    return RateAccount(
        bits_sent=total, t_first=t_first, t_last=t_last, rate=tail / (t_last - t_first)
    )
