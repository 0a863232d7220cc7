"""Coordinate machinery: Pascal coefficient transforms, the triangular
state-mixing matrices, the saturation primitive, and the change to slowed
time with its transformed right-hand side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConfigError, HistoryUnderflowError, NumericDomainError
from .traces import Event, ScaledTrace, Trace

# saturation graph: identity up to LIN_EDGE, flat beyond SAT_EDGE, C1 blend between
LIN_EDGE = 19.0 / 20.0
SAT_EDGE = 21.0 / 20.0


# -- coefficient transforms -------------------------------------------------


def pascal_coeffs(i: int, n: int) -> np.ndarray:
    """Row i (1-based) of the upper-triangular Pascal mix: C(n-i, j-i), j=i..n."""
    if not 1 <= i <= n:
        raise ConfigError(f"index {i} out of range 1..{n}")
    return np.array([math.comb(n - i, j - i) for j in range(i, n + 1)], dtype=float)


def pascal_inv_coeffs(i: int, n: int) -> np.ndarray:
    """Row i of the inverse mix: signs alternate, (-1)^(j-i) C(n-i, j-i)."""
    c = pascal_coeffs(i, n)
    c[1::2] *= -1.0
    return c


def apply_pascal(i: int, n: int, a: np.ndarray) -> float:
    return float(pascal_coeffs(i, n) @ np.asarray(a, dtype=float))


def apply_pascal_inv(i: int, n: int, a: np.ndarray) -> float:
    return float(pascal_inv_coeffs(i, n) @ np.asarray(a, dtype=float))


# -- parameters and mixing matrices -----------------------------------------


@dataclass(frozen=True)
class TransformParams:
    """Knobs of the coordinate change.

    time_dilation >= 1 slows the clock; gain <= quad_bound scales amplitudes;
    delay is the channel delay in original time, scaled_delay = delay /
    time_dilation in the slowed clock.
    """

    n: int
    time_dilation: float
    gain: float
    quad_bound: float
    delay: float
    scaled_delay: float = field(init=False)

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if not (self.time_dilation >= 1.0):
            raise ConfigError("time_dilation must be >= 1")
        if not (0 < self.gain <= self.quad_bound):
            raise ConfigError("need 0 < gain <= quad_bound")
        if self.delay < 0:
            raise ConfigError("delay must be >= 0")
        object.__setattr__(self, "scaled_delay", self.delay / self.time_dilation)


@dataclass(frozen=True)
class CoordMatrix:
    """Upper-triangular state mix with cached inverse.

    Row j combines the amplitude/time scalings with the Pascal coefficients:
    mat[j, m] = C(n-j, m-j) * (quad_bound/gain) * time_dilation**(m-1).
    """

    start: int  # 1-based index of the first retained component
    n: int
    mat: np.ndarray
    inv: np.ndarray


def build_coord_matrix(tp: TransformParams, start: int = 1) -> CoordMatrix:
    if not 1 <= start <= tp.n:
        raise ConfigError(f"start index {start} out of range 1..{tp.n}")
    m = tp.n - start + 1
    scale = tp.quad_bound / tp.gain
    mat = np.zeros((m, m))
    for rj, j in enumerate(range(start, tp.n + 1)):
        for rm, col in enumerate(range(start, tp.n + 1)):
            if col >= j:
                mat[rj, rm] = (
                    math.comb(tp.n - j, col - j) * scale * tp.time_dilation ** (col - 1)
                )
    inv = scipy.linalg.solve_triangular(mat, np.eye(m))
    return CoordMatrix(start=start, n=tp.n, mat=mat, inv=inv)


def upper_ones(m: int) -> np.ndarray:
    """Strictly upper-triangular all-ones coupling matrix."""
    return np.triu(np.ones((m, m)), 1)


# -- saturation --------------------------------------------------------------


def sat_unit(s):
    """Odd C1 saturation: identity on [0, 19/20], 1 beyond 21/20.

    On the blend interval the Hermite data (value/slope continuity at both
    edges) collapses the cubic term, leaving sigma = 0.95 + 0.1 t - 0.05 t^2
    with t = (|s| - 0.95) / 0.1, whose slope 1 - t stays in [0, 1].
    """
    s = np.asarray(s, dtype=float)
    a = np.abs(s)
    t = (a - LIN_EDGE) / (SAT_EDGE - LIN_EDGE)
    blend = LIN_EDGE + 0.1 * t - 0.05 * t * t
    core = np.where(a <= LIN_EDGE, a, np.where(a >= SAT_EDGE, 1.0, blend))
    out = np.where(s < 0, -core, core)
    return out if out.ndim else float(out)


def saturation(s, level: float):
    """Saturation with plateau ``level``: level * sat_unit(s / level)."""
    if not level > 0:
        raise ConfigError("saturation level must be positive")
    return level * sat_unit(np.asarray(s, dtype=float) / level)


# -- transformed right-hand side ---------------------------------------------


def quad_gain(tp: TransformParams) -> float:
    """Curvature bound of the transformed nonlinearity."""
    n = tp.n
    return n**3 * math.factorial(n) ** 3 * tp.gain / tp.time_dilation


def quad_domain(tp: TransformParams) -> float:
    """Infinity-ball radius on which quad_gain is guaranteed."""
    return tp.quad_bound * tp.time_dilation / (tp.gain * math.factorial(tp.n + 1))


def input_from_scaled(tp: TransformParams, v: float) -> float:
    """Invert the input change: u = v * gain / (quad_bound * dilation^n)."""
    return v * tp.gain / (tp.quad_bound * tp.time_dilation**tp.n)


def input_to_scaled(tp: TransformParams, u: float) -> float:
    return u * tp.quad_bound * tp.time_dilation**tp.n / tp.gain


def nonlin_part(tp: TransformParams, cm: CoordMatrix, plant, w: np.ndarray) -> np.ndarray:
    """Transformed nonlinearity: dilation * Phi f(Phi^-1 w, 0) - coupling * w.

    Computed from the definition rather than a closed form; the last
    component is identically zero.
    """
    w = np.asarray(w, dtype=float)
    x = cm.inv @ w
    return tp.time_dilation * (cm.mat @ plant.vector_field(x, 0.0)) - upper_ones(tp.n) @ w


def scaled_rhs(
    tp: TransformParams,
    cm: CoordMatrix,
    plant,
    z: np.ndarray,
    z_delayed: np.ndarray,
    err: np.ndarray,
    v: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Flow of the transformed pair (state, tracking error)."""
    z = np.asarray(z, dtype=float)
    if not (
        np.all(np.isfinite(z))
        and np.all(np.isfinite(z_delayed))
        and np.all(np.isfinite(err))
        and np.isfinite(v)
    ):
        raise NumericDomainError("non-finite input to scaled_rhs")
    u = input_from_scaled(tp, v)
    dz = tp.time_dilation * (cm.mat @ plant.vector_field(cm.inv @ z, u))
    gam = upper_ones(tp.n)
    derr = (
        gam @ err
        + nonlin_part(tp, cm, plant, err + z_delayed)
        - nonlin_part(tp, cm, plant, z_delayed)
    )
    return dz, derr


# -- trace transforms ---------------------------------------------------------


def to_scaled_sample(tp: TransformParams, cm: CoordMatrix, trace: Trace, t: float):
    """One trace row in slowed coordinates; needs history at t - delay."""
    j = trace.index_of(t)
    if j < trace.delay_steps:
        raise HistoryUnderflowError(f"no history at {t} - delay")
    jd = j - trace.delay_steps
    r = t / tp.time_dilation
    z = cm.mat @ trace.x[j]
    err = cm.mat @ (trace.dec_estimate[j] - trace.x[jd])
    cell = trace.dec_cell[j].copy()
    v = input_to_scaled(tp, float(trace.u[j]))
    return r, z, err, cell, v


def from_scaled_sample(
    tp: TransformParams,
    cm: CoordMatrix,
    r: float,
    z: np.ndarray,
    err: np.ndarray,
    cell: np.ndarray,
    v: float,
    z_delayed: np.ndarray,
):
    """Invert to_scaled_sample given the delayed scaled state."""
    t = r * tp.time_dilation
    x = cm.inv @ np.asarray(z, dtype=float)
    dec_estimate = cm.inv @ (np.asarray(err, dtype=float) + np.asarray(z_delayed, dtype=float))
    dec_cell = np.asarray(cell, dtype=float).copy()
    u = input_from_scaled(tp, v)
    return t, x, dec_estimate, dec_cell, u


def to_scaled(tp: TransformParams, cm: CoordMatrix, trace: Trace) -> ScaledTrace:
    """Whole-trace change of coordinates, with delivery events mapped."""
    d = trace.delay_steps
    npts = trace.x.shape[0]
    z = trace.x @ cm.mat.T
    err = np.full((npts, tp.n), np.nan)
    if npts > d:
        err[d:] = (trace.dec_estimate[d:] - trace.x[: npts - d]) @ cm.mat.T
    v = trace.u * (tp.quad_bound * tp.time_dilation**tp.n / tp.gain)
    events = []
    for ev in trace.events:
        if ev.kind != "delivery" or ev.index < d:
            continue
        zd = z[ev.index - d]
        events.append(
            Event(
                kind="delivery",
                k=ev.k,
                index=ev.index,
                time=ev.time / tp.time_dilation,
                pre={
                    "track_err": cm.mat @ ev.pre["dec_estimate"] - zd,
                    "cell": ev.pre["dec_cell"].copy(),
                },
                post={
                    "track_err": cm.mat @ ev.post["dec_estimate"] - zd,
                    "cell": ev.post["dec_cell"].copy(),
                },
                symbols=ev.symbols,
            )
        )
    return ScaledTrace(
        h=trace.h / tp.time_dilation,
        r0=trace.t0 / tp.time_dilation,
        n=tp.n,
        delay_steps=d,
        state=z,
        track_err=err,
        cell=trace.dec_cell.copy(),
        control=v,
        i_start=d,
        events=events,
        meta=dict(trace.meta),
    )
