"""Closed-loop simulation on a deterministic shared grid.

``run`` integrates plant + encoder + decoder in original time with jumps at
transmission and delivery instants; ``run_scaled`` integrates the
transformed pair (state, tracking error) directly in slowed time as an
independent oracle.  All events land exactly on the grid (the delay and
every scheduled time must be integer multiples of the step), jumps read
left limits and then commit, and identical configurations yield
bit-identical traces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels, codec
from .channel import ChannelModel
from .codec import (
    ContractionMatrix,
    decoder_delivery_jump,
    default_growth_constants,
    design_contraction,
    encoder_sample_jump,
    initialize,
    omega_delivery_jump,
    skip_sample,
)
from .controller import ControllerParams, control_original_rows, control_scaled_rows
from .errors import ConfigError, DivergenceError
from .traces import Event, PacketRecord, ScaledTrace, Trace
from .transforms import CoordMatrix


@dataclass(frozen=True)
class SimConfig:
    """Grid step, horizon, and which time scale to integrate in."""

    h: float
    horizon: float
    time_scale: str = "original"

    def __post_init__(self):
        if self.h <= 0 or self.horizon <= 0:
            raise ConfigError("step and horizon must be positive")
        if self.time_scale not in ("original", "scaled"):
            raise ConfigError("time_scale must be 'original' or 'scaled'")


def _grid_index(t: float, h: float, what: str) -> int:
    idx = t / h
    j = int(round(idx))
    if abs(idx - j) > 1e-6:
        raise ConfigError(f"{what} {t} is not an integer multiple of the step {h}")
    return j


def _prepare(plant, cp: ControllerParams, chan: ChannelModel, sim: SimConfig, x0):
    x0 = np.asarray(x0, dtype=float)
    if not plant.check_initial_condition(x0):
        raise ConfigError("initial state outside the configured initial box")
    if abs(cp.delay - chan.delay) > 1e-12:
        raise ConfigError("controller and channel disagree on the delay")
    nsteps = _grid_index(sim.horizon, sim.h, "horizon")
    d = _grid_index(cp.delay, sim.h, "delay")
    sample_idx = np.array(
        [_grid_index(t, sim.h, "transmission time") for t in chan.schedule.times],
        dtype=int,
    )
    sample_idx = sample_idx[sample_idx <= nsteps]
    kept = np.array([not chan.drop.dropped(k) for k in range(sample_idx.size)])
    return x0, nsteps, d, sample_idx, kept


def _span_boundaries(nsteps: int, d: int, sample_idx, kept) -> list[int]:
    bounds = {0, nsteps, d}
    bounds.update(int(j) for j in sample_idx)
    bounds.update(int(j) + d for j, keep in zip(sample_idx, kept) if j + d <= nsteps)
    return sorted(b for b in bounds if 0 <= b <= nsteps)


def _check_finite(arrays, j0: int, j1: int, h: float):
    for arr in arrays:
        seg = arr[j0 : j1 + 1]
        bad = ~np.isfinite(seg)
        if bad.any():
            rows = np.nonzero(bad.any(axis=tuple(range(1, seg.ndim))))[0]
            t = (j0 + int(rows[0])) * h
            raise DivergenceError(f"non-finite state at t={t:.6g}", time=t)


def run(
    plant,
    cp: ControllerParams,
    chan: ChannelModel,
    sim: SimConfig,
    x0,
    cm: CoordMatrix | None = None,
    lam: ContractionMatrix | None = None,
) -> Trace:
    """Integrate the closed loop in original time and record everything."""
    n = plant.n
    if cm is None:
        cm = cp.coord_matrix()
    if lam is None:
        growth = default_growth_constants(plant, cp.transform_params(), cm)
        lam = design_contraction(n, growth, chan.effective_gap_bound())
    x0, nsteps, d, sample_idx, kept = _prepare(plant, cp, chan, sim, x0)

    X = np.zeros((nsteps + 1, n))
    OM = np.zeros((nsteps + 1, n))
    XI = np.zeros((nsteps + 1, n))
    PS = np.zeros((nsteps + 1, n))
    CELL = np.zeros((nsteps + 1, n))
    NU = np.zeros((nsteps + 1, n))
    X[0] = x0
    enc, dec = initialize(plant, cm)
    CELL[0] = enc.cell
    NU[0] = dec.cell

    tcoef, texp, trow = plant.packed_terms()
    mix = np.ascontiguousarray(cm.mat)
    levels = np.ascontiguousarray(cp.levels)
    cu = -cp.gain / (cp.quad_bound * cp.time_dilation**cp.n)
    dbuf = max(d + 1, 2)
    som = np.zeros((4, dbuf, n))
    sps = np.zeros((4, dbuf, n))

    events: list[Event] = []
    packets: list[PacketRecord] = []
    sample_at = {int(j): k for k, j in enumerate(sample_idx)}
    # delivery instants of dropped indices: both sides skip, decoder advances
    skip_at = {int(j) + d: k for k, j in enumerate(sample_idx) if not kept[k]}
    chan.in_flight.clear()

    bounds = _span_boundaries(nsteps, d, sample_idx, kept)
    for bi, idx in enumerate(bounds):
        t = idx * sim.h
        # pick up the kernel-flowed values (left limits at this instant);
        # cells do not flow, the python-side copies are authoritative
        enc = codec.EncoderState(
            replica=OM[idx].copy(), estimate=XI[idx].copy(), cell=enc.cell
        )
        dec = codec.DecoderState(
            estimate=PS[idx].copy(), cell=dec.cell, next_k=dec.next_k
        )
        # deliveries first, then samples; both read left limits
        if idx in skip_at:
            dec = skip_sample(dec)
        for _, pkt, extra in chan.due(t):
            snap, rec = extra
            pre = {
                "dec_estimate": dec.estimate.copy(),
                "dec_cell": dec.cell.copy(),
                "replica": enc.replica.copy(),
            }
            dec = decoder_delivery_jump(dec, pkt, cm, lam)
            enc = omega_delivery_jump(enc, snap[0], snap[1], snap[2], cm)
            rec.t_delivered = t
            events.append(
                Event(
                    kind="delivery",
                    k=pkt.k,
                    index=idx,
                    time=t,
                    pre=pre,
                    post={
                        "dec_estimate": dec.estimate.copy(),
                        "dec_cell": dec.cell.copy(),
                        "replica": enc.replica.copy(),
                    },
                    symbols=pkt.symbols.copy(),
                )
            )
        if idx in sample_at:
            k = sample_at[idx]
            if not kept[k]:
                events.append(Event(kind="drop", k=k, index=idx, time=t))
            else:
                pre = {
                    "x": X[idx].copy(),
                    "estimate": enc.estimate.copy(),
                    "cell": enc.cell.copy(),
                }
                snap = (X[idx].copy(), enc.estimate.copy(), enc.cell.copy())
                enc, pkt = encoder_sample_jump(enc, X[idx], cm, lam, k, t)
                rec = PacketRecord(
                    k=k,
                    t_sent=t,
                    t_delivered=float("nan"),
                    symbols=pkt.symbols.copy(),
                    bits=pkt.bits,
                )
                packets.append(rec)
                chan.send(pkt, extra=(snap, rec))
                events.append(
                    Event(
                        kind="sample",
                        k=k,
                        index=idx,
                        time=t,
                        pre=pre,
                        post={"estimate": enc.estimate.copy(), "cell": enc.cell.copy()},
                        symbols=pkt.symbols.copy(),
                    )
                )
                if d == 0:
                    # zero delay degenerates to sample-then-deliver in one instant
                    for _, pkt0, extra0 in chan.due(t):
                        _, rec0 = extra0
                        pre0 = {
                            "dec_estimate": dec.estimate.copy(),
                            "dec_cell": dec.cell.copy(),
                        }
                        dec = decoder_delivery_jump(dec, pkt0, cm, lam)
                        rec0.t_delivered = t
                        events.append(
                            Event(
                                kind="delivery",
                                k=pkt0.k,
                                index=idx,
                                time=t,
                                pre=pre0,
                                post={
                                    "dec_estimate": dec.estimate.copy(),
                                    "dec_cell": dec.cell.copy(),
                                },
                                symbols=pkt0.symbols.copy(),
                            )
                        )
        # commit post-jump values at this grid point (zero delay: the
        # replica is bypassed and mirrors the decoder estimate)
        OM[idx] = dec.estimate if d == 0 else enc.replica
        XI[idx] = enc.estimate
        PS[idx] = dec.estimate
        CELL[idx] = enc.cell
        NU[idx] = dec.cell
        if bi + 1 == len(bounds):
            break
        nxt = bounds[bi + 1]
        if d == 0:
            _kernels.flow_span_nodelay(
                X, XI, PS, idx, nxt, sim.h, tcoef, texp, trow, mix, levels, cu, n
            )
            OM[idx + 1 : nxt + 1] = PS[idx + 1 : nxt + 1]
        else:
            _kernels.flow_span(
                X, OM, XI, PS, idx, nxt, sim.h, d, nxt <= d,
                som, sps, dbuf, tcoef, texp, trow, mix, levels, cu, n,
            )
        CELL[idx + 1 : nxt + 1] = enc.cell
        NU[idx + 1 : nxt + 1] = dec.cell
        _check_finite((X, OM, XI, PS), idx, nxt, sim.h)

    u = control_original_rows(cp, cm, PS)
    meta = {
        "mode": cp.mode,
        "n": n,
        "h": sim.h,
        "horizon": sim.horizon,
        "delay": cp.delay,
        "delay_steps": d,
        "time_dilation": cp.time_dilation,
        "gain": cp.gain,
        "quad_bound": cp.quad_bound,
        "levels": cp.levels.tolist(),
        "growth": lam.growth.tolist(),
        "contraction_gap_bound": lam.gap_bound,
        "drop": chan.drop.describe() if hasattr(chan.drop, "describe") else "none",
        "delayed_reads": "past-stage-arguments (shift-augmented one-step method)",
        "stepper": "classical RK4",
    }
    return Trace(
        h=sim.h,
        t0=0.0,
        n=n,
        delay_steps=d,
        x=X,
        replica=OM,
        estimate=XI,
        cell=CELL,
        dec_estimate=PS,
        dec_cell=NU,
        u=u,
        events=events,
        packets=packets,
        meta=meta,
    )


def run_scaled(
    plant,
    cp: ControllerParams,
    chan: ChannelModel,
    sim: SimConfig,
    x0,
    cm: CoordMatrix | None = None,
    lam: ContractionMatrix | None = None,
) -> ScaledTrace:
    """Integrate the transformed system directly in slowed time.

    Same grid indices as ``run`` (r = t / time_dilation); jumps happen only
    at delivery instants and act on (tracking error, cell widths).
    """
    n = plant.n
    if cm is None:
        cm = cp.coord_matrix()
    if lam is None:
        growth = default_growth_constants(plant, cp.transform_params(), cm)
        lam = design_contraction(n, growth, chan.effective_gap_bound())
    x0, nsteps, d, sample_idx, kept = _prepare(plant, cp, chan, sim, x0)
    if d == 0:
        raise ConfigError("the slowed-time route needs a positive delay")

    h_r = sim.h / cp.time_dilation
    Z = np.zeros((nsteps + 1, n))
    E = np.full((nsteps + 1, n), np.nan)
    P = np.zeros((nsteps + 1, n))
    Z[0] = cm.mat @ x0
    width0 = 2.0 * (cm.mat @ plant.init_box)
    P[: min(d, nsteps) + 1] = width0

    tcoef, texp, trow = plant.packed_terms()
    mix = np.ascontiguousarray(cm.mat)
    mixinv = np.ascontiguousarray(cm.inv)
    levels = np.ascontiguousarray(cp.levels)
    u_from_v = cp.gain / (cp.quad_bound * cp.time_dilation**cp.n)
    dbuf = max(d + 1, 2)
    sz = np.zeros((6, dbuf, n))

    events: list[Event] = []
    cell = width0.copy()
    deliver_at = {
        int(j) + d: k
        for k, j in enumerate(sample_idx)
        if kept[k] and int(j) + d <= nsteps
    }

    bounds = _span_boundaries(nsteps, d, sample_idx, kept)
    for bi, idx in enumerate(bounds):
        r = idx * h_r
        if idx == d and idx <= nsteps:
            # tracking error becomes defined at the first possible delivery
            # instant: decoder estimate is still zero, delayed state is Z(r0)
            E[idx] = -Z[0]
        if idx in deliver_at:
            k = deliver_at[idx]
            err = E[idx].copy()
            codec.check_scaled_containment(err, cell, time=r, k=k)
            symbols = np.sign(-err)
            post_err = err + 0.25 * symbols * cell
            post_cell = lam.mat @ cell
            events.append(
                Event(
                    kind="delivery",
                    k=k,
                    index=idx,
                    time=r,
                    pre={"track_err": err, "cell": cell.copy()},
                    post={"track_err": post_err.copy(), "cell": post_cell.copy()},
                    symbols=symbols.astype(np.int8),
                )
            )
            E[idx] = post_err
            cell = post_cell
        P[idx] = cell
        if bi + 1 == len(bounds):
            break
        nxt = bounds[bi + 1]
        _kernels.flow_span_scaled(
            Z, E, idx, nxt, h_r, d, idx >= d,
            sz, dbuf, tcoef, texp, trow, mix, mixinv, levels, n,
            cp.time_dilation, u_from_v,
        )
        P[idx + 1 : nxt + 1] = cell
        _check_finite((Z,), idx, nxt, h_r)
        if idx >= d:
            _check_finite((E,), idx, nxt, h_r)

    v = np.zeros(nsteps + 1)
    if nsteps >= d:
        v[d:] = control_scaled_rows(cp, E[d:] + Z[: nsteps + 1 - d])
    meta = {
        "mode": cp.mode,
        "n": n,
        "h_r": h_r,
        "delay_steps": d,
        "time_dilation": cp.time_dilation,
        "gain": cp.gain,
        "quad_bound": cp.quad_bound,
        "stepper": "Fehlberg-5 (independent oracle route)",
    }
    return ScaledTrace(
        h=h_r,
        r0=0.0,
        n=n,
        delay_steps=d,
        state=Z,
        track_err=E,
        cell=P,
        control=v,
        i_start=d,
        events=events,
        meta=meta,
    )
