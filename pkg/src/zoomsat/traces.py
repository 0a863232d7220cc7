"""Dense grid records of closed-loop runs, in original or scaled time."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TraceLookupError


@dataclass
class Event:
    """One discrete update: a transmission, a delivery, or a dropped sample.

    ``pre`` and ``post`` hold left-limit and committed values of the state
    components the jump touches.
    """

    kind: str  # 'sample' | 'delivery' | 'drop'
    k: int
    index: int
    time: float
    pre: dict = field(default_factory=dict)
    post: dict = field(default_factory=dict)
    symbols: np.ndarray | None = None


@dataclass
class PacketRecord:
    k: int
    t_sent: float
    t_delivered: float  # nan when still in flight at the end of the run
    symbols: np.ndarray
    bits: int


def _index_of(t: float, t0: float, h: float, nmax: int) -> int:
    idx = (t - t0) / h
    j = int(round(idx))
    if abs(idx - j) > 1e-6:
        raise TraceLookupError(f"time {t} is off the grid (step {h})")
    if j < 0 or j > nmax:
        raise TraceLookupError(f"time {t} outside recorded span")
    return j


@dataclass
class Trace:
    """Grid record of a run in original time.

    Row j holds the committed (right-continuous) value at t0 + j*h; left
    limits at jump instants live in ``events``.
    """

    h: float
    t0: float
    n: int
    delay_steps: int
    x: np.ndarray  # (N+1, n) plant state
    replica: np.ndarray  # (N+1, n) encoder's copy of the decoder
    estimate: np.ndarray  # (N+1, n) encoder estimate
    cell: np.ndarray  # (N+1, n) encoder cell widths
    dec_estimate: np.ndarray  # (N+1, n) decoder estimate
    dec_cell: np.ndarray  # (N+1, n) decoder cell widths
    u: np.ndarray  # (N+1,) applied control
    events: list = field(default_factory=list)
    packets: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def num_steps(self) -> int:
        return self.x.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.x.shape[0])

    @property
    def theta(self) -> float:
        return self.delay_steps * self.h

    def index_of(self, t: float) -> int:
        return _index_of(t, self.t0, self.h, self.num_steps)

    def lookup(self, t: float) -> dict:
        """Exact stored row at a grid time."""
        j = self.index_of(t)
        return {
            "t": self.t0 + j * self.h,
            "x": self.x[j],
            "replica": self.replica[j],
            "estimate": self.estimate[j],
            "cell": self.cell[j],
            "dec_estimate": self.dec_estimate[j],
            "dec_cell": self.dec_cell[j],
            "u": self.u[j],
        }

    def window_sup(self, t: float, width: float, signal: str = "x") -> float:
        """sup of the rowwise Euclidean norm of ``signal`` over [t-width, t]."""
        j1 = self.index_of(t)
        j0 = self.index_of(t - width)
        rows = getattr(self, signal)[j0 : j1 + 1]
        return float(np.max(np.linalg.norm(rows, axis=1)))

    def sample_indices(self) -> np.ndarray:
        return np.array(
            [ev.index for ev in self.events if ev.kind == "sample"], dtype=int
        )

    def full_state_norms(self) -> np.ndarray:
        """Rowwise norm of the stacked closed-loop state."""
        stacked = np.hstack(
            [self.x, self.replica, self.estimate, self.cell, self.dec_estimate, self.dec_cell]
        )
        return np.linalg.norm(stacked, axis=1)


@dataclass
class ScaledTrace:
    """Grid record in slowed time r = t / time_dilation.

    ``track_err`` rows before ``i_start`` predate the first delivery and are
    NaN (the tracking error is undefined there).
    """

    h: float  # r-scale step
    r0: float
    n: int
    delay_steps: int
    state: np.ndarray  # (N+1, n) scaled plant state
    track_err: np.ndarray  # (N+1, n) scaled tracking error
    cell: np.ndarray  # (N+1, n) scaled cell widths
    control: np.ndarray  # (N+1,) scaled input
    i_start: int
    events: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def num_steps(self) -> int:
        return self.state.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.r0 + self.h * np.arange(self.state.shape[0])

    def index_of(self, r: float) -> int:
        return _index_of(r, self.r0, self.h, self.num_steps)

    def error_state_norms(self) -> np.ndarray:
        """Rowwise norm of (tracking error, cell widths), from i_start."""
        stacked = np.hstack([self.track_err, self.cell])
        return np.linalg.norm(stacked, axis=1)

    def full_norms(self) -> np.ndarray:
        """Rowwise norm of (state, tracking error, cell widths)."""
        stacked = np.hstack([self.state, self.track_err, self.cell])
        return np.linalg.norm(stacked, axis=1)

    def jump_indices(self) -> np.ndarray:
        return np.array(
            [ev.index for ev in self.events if ev.kind == "delivery"], dtype=int
        )
