"""Numerical monitors: containment, replica synchrony, linear-region entry,
energy-functional dissipation, eventual-bound checks, and exponential-decay
fitting.  Monitors only read traces and parameter objects; they never touch
simulation state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .codec import CONTAIN_FLOOR, CONTAIN_RTOL
from .controller import ControllerParams
from .errors import ConfigError, HistoryUnderflowError, InsufficientDataError
from .traces import ScaledTrace, Trace
from .transforms import quad_gain, saturation, upper_ones


@dataclass
class CheckResult:
    name: str
    status: str  # 'pass' | 'fail' | 'skip'
    worst: float | None = None
    first_violation: float | None = None
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status != "fail"

    def render(self) -> str:
        extra = ""
        if self.worst is not None:
            extra += f" worst={self.worst:.6g}"
        if self.first_violation is not None:
            extra += f" first_violation={self.first_violation:.6g}"
        note = self.details.get("note")
        if note:
            extra += f" ({note})"
        return f"[{self.status.upper():4s}] {self.name}{extra}"


@dataclass
class MonitorReport:
    checks: list

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def render(self) -> str:
        return "\n".join(c.render() for c in self.checks)

    def records(self) -> list[str]:
        out = []
        for c in self.checks:
            out.append(f"check.{c.name}.status = {c.status}")
            if c.worst is not None:
                out.append(f"check.{c.name}.worst = {c.worst!r}")
            if c.first_violation is not None:
                out.append(f"check.{c.name}.first_violation = {c.first_violation!r}")
            for key, val in c.details.items():
                out.append(f"check.{c.name}.{key} = {val!r}")
        return out


# -- cascade data ---------------------------------------------------------------


@dataclass(frozen=True)
class CascadeData:
    """Certificates of the slowed closed loop in its linear operating region."""

    coupling: np.ndarray  # strictly-upper all-ones
    delay_coupling: np.ndarray  # all minus-ones
    lyap: np.ndarray  # solves (coupling+delay_coupling)^T Q + Q (...) = -I
    residual: float
    q_bound: float
    a_bound: float
    nonlin_gain: float
    scaled_delay: float

    @property
    def gain_condition(self) -> tuple[float, float]:
        return self.nonlin_gain, 1.0 / (8.0 * self.q_bound)

    @property
    def delay_condition(self) -> tuple[float, float]:
        a, q = self.a_bound, self.q_bound
        return self.scaled_delay, 1.0 / (8.0 * a**2 * (8.0 * a * q + 1.0) ** 2)


def build_cascade_data(cp: ControllerParams) -> CascadeData:
    n = cp.n
    gam = upper_ones(n)
    delta = -np.ones((n, n))
    a = gam + delta
    q = scipy.linalg.solve_continuous_lyapunov(a.T, -np.eye(n))
    residual = float(np.max(np.abs(a.T @ q + q @ a + np.eye(n))))
    q_bound = (1.0 + n**2) ** (n - 1)
    data = CascadeData(
        coupling=gam,
        delay_coupling=delta,
        lyap=q,
        residual=residual,
        q_bound=q_bound,
        a_bound=float(n),
        nonlin_gain=math.sqrt(n) * quad_gain(cp.transform_params()),
        scaled_delay=cp.scaled_delay,
    )
    if np.linalg.norm(q, 2) > q_bound * (1 + 1e-9):
        raise ConfigError("energy matrix norm exceeds its structural bound")
    return data


def cascade_conditions(data: CascadeData) -> list[tuple[str, float, float, bool]]:
    g_lhs, g_rhs = data.gain_condition
    d_lhs, d_rhs = data.delay_condition
    return [
        ("nonlin_gain <= 1/(8q)", g_lhs, g_rhs, g_lhs <= g_rhs * (1 + 1e-12)),
        ("scaled_delay <= 1/(8a^2(8aq+1)^2)", d_lhs, d_rhs, d_lhs <= d_rhs * (1 + 1e-12)),
    ]


# -- containment and synchrony -----------------------------------------------------


def check_containment(st: ScaledTrace) -> CheckResult:
    """Tracking error inside half the cell widths at every grid point."""
    i0 = st.i_start
    err = np.abs(st.track_err[i0:])
    half = st.cell[i0:] / 2.0
    bound = half * (1 + CONTAIN_RTOL) + CONTAIN_FLOOR
    bad = err > bound
    ratios = err / (half + CONTAIN_FLOOR)
    worst = float(np.max(ratios)) if ratios.size else 0.0
    first = None
    if bad.any():
        j = int(np.nonzero(bad.any(axis=1))[0][0])
        first = st.r0 + (i0 + j) * st.h
    worst_post = 0.0
    for ev in st.events:
        post_ratio = np.max(
            np.abs(ev.post["track_err"]) / (ev.post["cell"] + CONTAIN_FLOOR)
        )
        worst_post = max(worst_post, float(post_ratio))
    post_ok = worst_post <= 0.5 * (1 + CONTAIN_RTOL)
    status = "pass" if first is None and post_ok else "fail"
    return CheckResult(
        name="containment",
        status=status,
        worst=worst,
        first_violation=first,
        details={
            "violations": int(bad.sum()),
            "worst_post_jump": worst_post,
            "num_jumps": len(st.events),
        },
    )


def check_synchrony(trace: Trace) -> CheckResult:
    """Replica identities must hold bit-exactly on the shared grid."""
    d = trace.delay_steps
    m_replica = float(np.max(np.abs(trace.replica - trace.dec_estimate)))
    npts = trace.x.shape[0]
    if npts > d:
        m_estimate = float(
            np.max(np.abs(trace.estimate[: npts - d] - trace.dec_estimate[d:]))
        )
        m_cell = float(np.max(np.abs(trace.cell[: npts - d] - trace.dec_cell[d:])))
    else:
        m_estimate = m_cell = 0.0
    worst = max(m_replica, m_estimate, m_cell)
    return CheckResult(
        name="synchrony",
        status="pass" if worst == 0.0 else "fail",
        worst=worst,
        details={
            "max_replica_dev": m_replica,
            "max_estimate_dev": m_estimate,
            "max_cell_dev": m_cell,
        },
    )


# -- linear operating region ---------------------------------------------------------


def nest_arguments(st: ScaledTrace, cp: ControllerParams) -> np.ndarray:
    """Per-level arguments of the saturation nest along the trace (rows >= i_start)."""
    d = st.delay_steps
    i0 = st.i_start
    if i0 < d:
        raise ConfigError("trace starts before its own delayed reads exist")
    npts = st.state.shape[0]
    w = st.track_err[i0:] + st.state[i0 - d : npts - d]
    args = np.empty_like(w)
    acc = np.zeros(w.shape[0])
    for i in range(cp.n):
        args[:, i] = w[:, i] + acc
        acc = saturation(args[:, i], cp.levels[i])
    return args


def _first_suffix_true(ok: np.ndarray) -> int | None:
    if not ok.size:
        return None
    suffix = np.logical_and.accumulate(ok[::-1])[::-1]
    idx = np.nonzero(suffix)[0]
    return int(idx[0]) if idx.size else None


LIN_MARGIN = 19.0 / 20.0


def detect_linear_region(st: ScaledTrace, cp: ControllerParams) -> CheckResult:
    """First time after which every nest argument stays within 19/20 of its level.

    Also reports when the per-component smallness thresholds
    |z_j| <= level_j / 4 and |e_j| <= level_j / (2 n 80^{j+1}) are first met
    for good.
    """
    args = nest_arguments(st, cp)
    ok = np.all(np.abs(args) <= LIN_MARGIN * cp.levels * (1 + 1e-12), axis=1)
    rel = _first_suffix_true(ok)
    i0 = st.i_start
    details = {}
    n = cp.n
    d = st.delay_steps
    z = st.state[i0:]
    e = st.track_err[i0:]
    for j in range(n):
        zj = _first_suffix_true(np.abs(z[:, j]) <= cp.levels[j] / 4.0)
        ej_th = cp.levels[j] / (2.0 * n * 80.0 ** (j + 2))
        ej = _first_suffix_true(np.abs(e[:, j]) <= ej_th)
        details[f"state_{j + 1}_small_at"] = (
            None if zj is None else st.r0 + (i0 + zj) * st.h
        )
        details[f"err_{j + 1}_small_at"] = (
            None if ej is None else st.r0 + (i0 + ej) * st.h
        )
    if rel is None:
        return CheckResult(
            name="linear_region", status="fail", details={"note": "never entered", **details}
        )
    entry = st.r0 + (i0 + rel) * st.h
    return CheckResult(
        name="linear_region",
        status="pass",
        worst=float(np.max(np.abs(args[rel:]) / cp.levels)),
        details={"entry_time": entry, **details},
    )


def linear_region_entry(st: ScaledTrace, cp: ControllerParams) -> float | None:
    res = detect_linear_region(st, cp)
    return res.details.get("entry_time") if res.status == "pass" else None


# -- energy functionals ------------------------------------------------------------


def _window_kernel(two_d: int, h: float) -> np.ndarray:
    """Trapezoid weights of int_{r-2tau}^r (s - (r-2tau)) g(s) ds by offset."""
    kern = np.array([(two_d - o) * h * h for o in range(two_d + 1)])
    kern[0] *= 0.5  # right endpoint of the trapezoid (offset 0 is s = r)
    kern[-1] *= 0.5  # left endpoint carries zero weight anyway
    return kern


def _windowed_integrals(st: ScaledTrace):
    d = st.delay_steps
    two_d = 2 * d
    zn2 = np.sum(st.state**2, axis=1)
    err = np.nan_to_num(st.track_err, nan=0.0)
    en2 = np.sum(err**2, axis=1) + np.sum(st.cell**2, axis=1)
    kern = _window_kernel(two_d, st.h)
    iz = np.convolve(zn2, kern)[: zn2.size]
    ie = np.convolve(en2, kern)[: en2.size]
    return zn2, en2, iz, ie, two_d


def eval_functionals(data: CascadeData, st: ScaledTrace, r: float) -> tuple[float, float]:
    """(quadratic energy, energy plus delay-window memory terms) at time r."""
    j = st.index_of(r)
    two_d = 2 * st.delay_steps
    if j - two_d < 0 or j - two_d < st.i_start:
        raise HistoryUnderflowError(f"need {two_d} steps of history at r={r}")
    z = st.state[j]
    v1 = float(z @ data.lyap @ z)
    zn2, en2, iz, ie, _ = _windowed_integrals(st)
    v2 = v1 + iz[j] / 16.0 + 2.0 * ie[j]
    return v1, v2


def check_dissipation(
    data: CascadeData, st: ScaledTrace, cp: ControllerParams, start: float | None = None
) -> CheckResult:
    """Discrete decay inequality for the memory functional on a post-entry segment.

    Between jumps: dV2/dr <= -|z|^2/4 + 8 (q^2 a^2 + 1) |err_state|^2 + tol,
    with tol = 10 h Lip and Lip the largest observed |dV2/dr|.  At jumps V2
    must not increase beyond tol.
    """
    d = st.delay_steps
    two_d = 2 * d
    npts = st.state.shape[0]
    js = st.i_start + two_d if start is None else max(st.index_of(start), st.i_start + two_d)
    if js >= npts - 1:
        return CheckResult(
            name="dissipation", status="skip", details={"note": "segment too short"}
        )
    zn2, en2, iz, ie, _ = _windowed_integrals(st)
    v1 = np.einsum("ij,jk,ik->i", st.state, data.lyap, st.state)
    v2 = v1 + iz / 16.0 + 2.0 * ie
    jumps = {int(j) for j in st.jump_indices()}
    coef = 8.0 * (data.q_bound**2 * data.a_bound**2 + 1.0)

    pairs = np.array(
        [j for j in range(js, npts - 1) if (j + 1) not in jumps], dtype=int
    )
    if pairs.size == 0:
        return CheckResult(
            name="dissipation", status="skip", details={"note": "no flow pairs"}
        )
    slopes = (v2[pairs + 1] - v2[pairs]) / st.h
    lip = float(np.max(np.abs(slopes)))
    tol = 10.0 * st.h * max(lip, 1e-30)
    rhs = -0.25 * zn2[pairs] + coef * en2[pairs] + tol
    flow_bad = slopes > rhs
    worst_flow = float(np.max(slopes - rhs))

    kern0 = _window_kernel(two_d, st.h)[0]
    jump_bad = 0
    worst_jump = 0.0
    ratios = []
    for ev in st.events:
        if ev.index < js:
            continue
        pre_en2 = float(ev.pre["track_err"] @ ev.pre["track_err"]) + float(
            ev.pre["cell"] @ ev.pre["cell"]
        )
        post_en2 = float(ev.post["track_err"] @ ev.post["track_err"]) + float(
            ev.post["cell"] @ ev.post["cell"]
        )
        dv2 = 2.0 * kern0 * (post_en2 - pre_en2)
        worst_jump = max(worst_jump, dv2 - tol)
        if dv2 > tol:
            jump_bad += 1
        if pre_en2 > 0:
            ratios.append(math.sqrt(post_en2 / pre_en2))
    first = None
    if flow_bad.any():
        first = st.r0 + int(pairs[np.nonzero(flow_bad)[0][0]]) * st.h
    status = "pass" if not flow_bad.any() and jump_bad == 0 else "fail"
    details = {
        "flow_violations": int(flow_bad.sum()),
        "jump_violations": jump_bad,
        "tol": tol,
        "segment_start": st.r0 + js * st.h,
        "worst_jump_increase": worst_jump,
    }
    if ratios:
        details["err_state_jump_ratio_min"] = float(np.min(ratios))
        details["err_state_jump_ratio_max"] = float(np.max(ratios))
    return CheckResult(
        name="dissipation",
        status=status,
        worst=worst_flow,
        first_violation=first,
        details=details,
    )


# -- eventual-bound check ------------------------------------------------------------


def check_boundedness_thresholds(
    st: ScaledTrace,
    cp: ControllerParams,
    level: int,
    lambda_star: float,
    mu_star: float,
    e_star: float,
    start: float | None = None,
) -> CheckResult:
    """Eventual bound |z_level| <= 4 (lambda* + mu* + e*) under the hypothesis gates.

    Gates: scaled delay <= 1/12 and each measured disturbance bound <=
    level/30.  Gate failure reports 'hypothesis not satisfied' and skips.
    """
    if not 1 <= level <= cp.n:
        raise ConfigError(f"level must be in 1..{cp.n}")
    eps = cp.levels[level - 1]
    gates = {
        "scaled_delay": (cp.scaled_delay, 1.0 / 12.0),
        "lambda_star": (lambda_star, eps / 30.0),
        "mu_star": (mu_star, eps / 30.0),
        "e_star": (e_star, eps / 30.0),
    }
    failed = [k for k, (lhs, rhs) in gates.items() if lhs > rhs * (1 + 1e-12)]
    if failed:
        return CheckResult(
            name=f"eventual_bound_z{level}",
            status="skip",
            details={"note": "hypothesis not satisfied", "failed_gates": failed},
        )
    bound = 4.0 * (lambda_star + mu_star + e_star)
    i0 = st.i_start if start is None else max(st.index_of(start), st.i_start)
    sig = np.abs(st.state[i0:, level - 1])
    ok = sig <= bound * (1 + 1e-9) + CONTAIN_FLOOR
    rel = _first_suffix_true(ok)
    if rel is None:
        return CheckResult(
            name=f"eventual_bound_z{level}",
            status="fail",
            worst=float(np.max(sig)),
            details={"bound": bound},
        )
    return CheckResult(
        name=f"eventual_bound_z{level}",
        status="pass",
        worst=float(np.max(sig[rel:])) if sig[rel:].size else 0.0,
        details={"bound": bound, "settle_time": st.r0 + (i0 + rel) * st.h},
    )


# -- exponential fit ------------------------------------------------------------------


@dataclass(frozen=True)
class FitResult:
    delta: float  # fitted decay rate (positive means decay)
    overshoot: float  # largest full-grid factor above the fitted envelope
    residual: float  # RMS log residual at the fitted points
    n_points: int

    @property
    def passed(self) -> bool:
        # floor absorbs least-squares rounding on perfectly flat signals
        return self.delta > 1e-12


def fit_exponential(tr, start: float | None = None, signal: str = "full") -> FitResult:
    """Least-squares exponential envelope of a decaying run.

    The fit is taken on the per-transmission section (post-jump grid values
    at event instants, when at least 8 are available) because the impulsive
    cell dynamics make the dense log signal a staircase; the full-grid
    maximum deviation from the fitted line is returned as the overshoot.
    A zero norm truncates the window (log undefined beyond it).

    ``signal``: 'full' stacks every recorded component; 'plant' uses the
    plant state alone; 'error' (slowed traces only) uses the tracking-error
    pair (error, cell widths).
    """
    if isinstance(tr, ScaledTrace):
        if signal == "full":
            norms = tr.full_norms()
        elif signal == "error":
            norms = tr.error_state_norms()
        else:
            norms = np.linalg.norm(tr.state, axis=1)
        section = tr.jump_indices()
        t0, h = tr.r0, tr.h
        start_idx = tr.i_start if start is None else tr.index_of(start)
    else:
        norms = (
            tr.full_state_norms() if signal == "full" else np.linalg.norm(tr.x, axis=1)
        )
        section = tr.sample_indices()
        t0, h = tr.t0, tr.h
        start_idx = 0 if start is None else tr.index_of(start)
    # positive prefix: the log is undefined from the first exact zero on
    nonpos = np.nonzero(norms[start_idx:] <= 0.0)[0]
    end_idx = start_idx + int(nonpos[0]) if nonpos.size else norms.size
    section = section[(section >= start_idx) & (section < end_idx)]
    idx = section if section.size >= 8 else np.arange(start_idx, end_idx)
    if idx.size < 2:
        raise InsufficientDataError("not enough positive samples to fit")
    t = t0 + h * idx.astype(float)
    y = np.log(norms[idx])
    coef, *_ = np.linalg.lstsq(np.column_stack([t, np.ones_like(t)]), y, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    resid = float(np.sqrt(np.mean((y - (slope * t + intercept)) ** 2)))
    grid = np.arange(start_idx, end_idx)
    tg = t0 + h * grid.astype(float)
    dev = np.log(norms[grid]) - (slope * tg + intercept)
    overshoot = float(np.exp(np.max(dev))) if dev.size else 1.0
    return FitResult(
        delta=-slope, overshoot=overshoot, residual=resid, n_points=int(idx.size)
    )
