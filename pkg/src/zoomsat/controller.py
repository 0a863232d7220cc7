"""Nested-saturation controller: parameter synthesis and evaluation in
original and slowed coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .transforms import (
    CoordMatrix,
    TransformParams,
    build_coord_matrix,
    quad_gain,
    saturation,
)


def saturation_levels(n: int) -> np.ndarray:
    """Geometric ladder 30^-(n-i+1), i = 1..n (outermost level 1/30)."""
    return np.array([30.0 ** (i - n - 1) for i in range(1, n + 1)])


def dilation_lower_bound(n: int, delay: float) -> float:
    """Smallest admissible time dilation for a given channel delay."""
    return delay * max(
        6.0 * 30.0 ** (n + 1) * n * (n + 1),
        8.0 * n**2 * (8.0 * n * (1.0 + n**2) ** (n - 1) + 1.0) ** 2,
    )


def gain_upper_bound(n: int, quad_bound: float, time_dilation: float) -> float:
    """Largest admissible amplitude gain given the dilation."""
    return min(
        time_dilation / (20.0 * 30.0**n * n**4 * math.factorial(n) ** 3),
        time_dilation
        / (8.0 * (1.0 + n**2) ** (n - 1) * math.sqrt(n) * n**3 * math.factorial(n) ** 3),
        quad_bound * time_dilation / math.factorial(n + 1),
        quad_bound,
    )


def scaled_delay_cap(n: int) -> float:
    """Admissible ceiling on the slowed-clock delay."""
    return 1.0 / max(
        6.0 * 30.0 ** (n + 1) * n * (n + 1),
        8.0 * n**2 * (8.0 * n * (1.0 + n**2) ** (n - 1) + 1.0) ** 2,
    )


def quad_gain_cap(n: int) -> float:
    """Admissible ceiling on the transformed curvature gain."""
    return 1.0 / max(20.0 * 30.0**n * n, 8.0 * (1.0 + n**2) ** (n - 1) * math.sqrt(n))


@dataclass(frozen=True)
class ControllerParams:
    """Resolved controller parameters.

    levels holds the saturation plateaus, outermost last; mode records how
    the numbers were chosen ('auto' synthesis or 'manual').
    """

    n: int
    levels: np.ndarray
    time_dilation: float
    gain: float
    quad_bound: float
    delay: float
    mode: str = "auto"
    scaled_delay: float = field(init=False)

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=float)
        if levels.shape != (self.n,) or not np.all(levels > 0):
            raise ConfigError("levels must be n positive scalars")
        object.__setattr__(self, "levels", levels)
        if not self.time_dilation >= 1.0:
            raise ConfigError("time_dilation must be >= 1")
        if not (0 < self.gain <= self.quad_bound):
            raise ConfigError("need 0 < gain <= quad_bound")
        if self.delay < 0:
            raise ConfigError("delay must be nonnegative")
        object.__setattr__(self, "scaled_delay", self.delay / self.time_dilation)

    def transform_params(self) -> TransformParams:
        return TransformParams(
            n=self.n,
            time_dilation=self.time_dilation,
            gain=self.gain,
            quad_bound=self.quad_bound,
            delay=self.delay,
        )

    def coord_matrix(self) -> CoordMatrix:
        return build_coord_matrix(self.transform_params())

    @property
    def outer_bound(self) -> float:
        """Hard bound on |u|: gain * outer level / (quad_bound * dilation^n)."""
        return (
            self.gain
            * self.levels[-1]
            / (self.quad_bound * self.time_dilation**self.n)
        )


def synthesize(
    n: int, quad_bound: float, delay: float, safety_margin: float = 1.0
) -> ControllerParams:
    """Pin parameters to the admissible-region corner.

    Dilation at its lower bound (least time stretching), gain at
    safety_margin times its upper bound (most control authority).
    """
    if n < 1 or quad_bound <= 0 or delay < 0:
        raise ConfigError("need n >= 1, quad_bound > 0, delay >= 0")
    if not 0 < safety_margin <= 1:
        raise ConfigError("safety_margin must be in (0, 1]")
    kappa = max(1.0, dilation_lower_bound(n, delay))
    gain = safety_margin * gain_upper_bound(n, quad_bound, kappa)
    return ControllerParams(
        n=n,
        levels=saturation_levels(n),
        time_dilation=kappa,
        gain=gain,
        quad_bound=quad_bound,
        delay=delay,
        mode="auto",
    )


def manual(
    n: int,
    quad_bound: float,
    delay: float,
    time_dilation: float,
    gain: float,
    levels=None,
) -> ControllerParams:
    """User-chosen parameters; admissibility is reported, not enforced."""
    return ControllerParams(
        n=n,
        levels=saturation_levels(n) if levels is None else np.asarray(levels, float),
        time_dilation=time_dilation,
        gain=gain,
        quad_bound=quad_bound,
        delay=delay,
        mode="manual",
    )


@dataclass(frozen=True)
class Condition:
    name: str
    lhs: float
    rhs: float

    @property
    def ok(self) -> bool:
        return self.lhs <= self.rhs * (1 + 1e-12)

    def render(self) -> str:
        mark = "ok " if self.ok else "VIOLATED"
        return f"{self.name}: {self.lhs:.6g} <= {self.rhs:.6g}  [{mark}]"


def admissibility_report(cp: ControllerParams) -> list[Condition]:
    """Numeric sides of every sufficient condition on (dilation, gain, delay)."""
    tp = cp.transform_params()
    return [
        Condition("gain <= quad_bound", cp.gain, cp.quad_bound),
        Condition(
            "gain <= quad_bound*dilation/(n+1)!",
            cp.gain,
            cp.quad_bound * cp.time_dilation / math.factorial(cp.n + 1),
        ),
        Condition("scaled_delay <= cap", cp.scaled_delay, scaled_delay_cap(cp.n)),
        Condition("curvature_gain <= cap", quad_gain(tp), quad_gain_cap(cp.n)),
        Condition("1 <= time_dilation", 1.0, cp.time_dilation),
    ]


def _nest(values: np.ndarray, levels: np.ndarray) -> float:
    acc = 0.0
    for a, lev in zip(values, levels):
        acc = float(saturation(a + acc, lev))
    return acc


def control_original(cp: ControllerParams, cm: CoordMatrix, psi: np.ndarray) -> float:
    """Feedback in original coordinates from the decoder estimate."""
    mixed = cm.mat @ np.asarray(psi, dtype=float)
    return -cp.gain / (cp.quad_bound * cp.time_dilation**cp.n) * _nest(mixed, cp.levels)


def control_scaled(cp: ControllerParams, err: np.ndarray, z_delayed: np.ndarray) -> float:
    """Feedback in slowed coordinates from (tracking error, delayed state)."""
    w = np.asarray(err, dtype=float) + np.asarray(z_delayed, dtype=float)
    return -_nest(w, cp.levels)


def control_scaled_rows(cp: ControllerParams, w: np.ndarray) -> np.ndarray:
    """Vectorized nest over rows of w = err + delayed state."""
    acc = np.zeros(w.shape[0])
    for i in range(cp.n):
        acc = saturation(w[:, i] + acc, cp.levels[i])
    return -acc


def control_original_rows(cp: ControllerParams, cm: CoordMatrix, psi_rows: np.ndarray) -> np.ndarray:
    """Vectorized feedback over rows of decoder estimates."""
    mixed = psi_rows @ cm.mat.T
    acc = np.zeros(mixed.shape[0])
    for i in range(cp.n):
        acc = saturation(mixed[:, i] + acc, cp.levels[i])
    return -cp.gain / (cp.quad_bound * cp.time_dilation**cp.n) * acc
