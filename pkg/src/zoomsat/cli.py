"""Scenario runner.

One TOML file describes a scenario (plant, controller, channel, sim grid,
monitor selection); the runner wires the modules, simulates, evaluates the
selected monitors, and writes artifacts:

    trace.csv      t, x_*, replica_*, estimate_*, cell_*, dec_estimate_*,
                   dec_cell_*, u        (one row per grid point)
    scaled.csv     r, state_*, track_err_*, cell_*, control   (scaled runs)
    events.csv     kind, k, index, time, symbols, then pre/post snapshots
    packets.csv    k, t_sent, t_delivered, symbols, bits
    monitors.txt   one line per check plus machine-readable records
    metadata.txt   every resolved parameter, seed, and convention

Exit status 0 means the run completed and every selected monitor passed
(skipped checks do not fail a run).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import copy
import csv
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import analysis
from .channel import (
    BernoulliDrop,
    ChannelModel,
    NoDrop,
    PatternDrop,
    generate_schedule,
    measure_rate,
)
from .codec import default_growth_constants, design_contraction
from .controller import admissibility_report, manual, synthesize
from .errors import ConfigError, ZoomsatError
from .hybridsim import SimConfig, run, run_scaled
from .plant import FeedforwardPlant
from .traces import Event, Trace
from .transforms import quad_gain, saturation, to_scaled

KNOWN_MONITORS = (
    "synchrony",
    "containment",
    "linear_region",
    "dissipation",
    "decay",
    "eventual_bound",
)


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int | None = None
    # plant
    n: int = 1
    quad_bound: float = 1.0
    init_box: list = field(default_factory=lambda: [1.0])
    stages: list = field(default_factory=list)  # [[{exps, coeff}, ...], ...]
    # controller
    mode: str = "auto"
    delay: float = 0.0
    safety_margin: float = 1.0
    time_dilation: float | None = None
    gain: float | None = None
    levels: list | None = None
    # channel
    gap_min: float = 1.0
    gap_max: float = 1.0
    sched_mode: str = "periodic"
    period: float | None = None
    sched_seed: int | None = None
    drop_kind: str = "none"
    drop_pattern: list | None = None
    drop_p: float = 0.0
    drop_cap: int = 0
    drop_seed: int | None = None
    # sim
    h: float = 0.1
    horizon: float = 10.0
    time_scale: str = "original"
    x0: list = field(default_factory=lambda: [0.0])
    # codec
    growth: list | None = None
    growth_density: int | None = None
    # monitors
    monitors: list = field(default_factory=lambda: ["synchrony", "containment"])
    decay_start: float | None = None
    dissipation_start: float | None = None
    eventual_level: int = 1


def _take(section: dict, path: str, known: dict):
    unknown = set(section) - set(known)
    if unknown:
        raise ConfigError(f"unknown key {path}.{sorted(unknown)[0]}")
    out = {}
    for key, (required, default) in known.items():
        if key in section:
            out[key] = section[key]
        elif required:
            raise ConfigError(f"missing required key {path}.{key}")
        else:
            out[key] = default
    return out


def parse_config(text: str) -> Scenario:
    """Strict parse: unknown keys are rejected, cross-field rules enforced."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    top = _take(
        raw,
        "",
        {
            "name": (False, "scenario"),
            "seed": (False, None),
            "plant": (True, None),
            "controller": (True, None),
            "channel": (True, None),
            "sim": (True, None),
            "codec": (False, {}),
            "monitors": (False, {}),
        },
    )
    sc = Scenario(name=top["name"], seed=top["seed"])

    stage_keys = {f"stage{i}": (False, []) for i in range(1, 64)}
    p = _take(
        top["plant"],
        "plant",
        {"n": (True, None), "quad_bound": (True, None), "init_box": (True, None), **stage_keys},
    )
    sc.n = int(p["n"])
    sc.quad_bound = float(p["quad_bound"])
    sc.init_box = [float(v) for v in p["init_box"]]
    sc.stages = []
    for i in range(1, sc.n):
        terms = p.get(f"stage{i}") or []
        norm = []
        for t in terms:
            t = _take(t, f"plant.stage{i}[]", {"exps": (True, None), "coeff": (True, None)})
            norm.append({"exps": [int(e) for e in t["exps"]], "coeff": float(t["coeff"])})
        sc.stages.append(norm)
    for i in range(sc.n, 64):
        if p.get(f"stage{i}"):
            raise ConfigError(f"plant.stage{i} exceeds the plant dimension")

    c = _take(
        top["controller"],
        "controller",
        {
            "mode": (True, None),
            "delay": (True, None),
            "safety_margin": (False, 1.0),
            "time_dilation": (False, None),
            "gain": (False, None),
            "levels": (False, None),
        },
    )
    sc.mode = c["mode"]
    sc.delay = float(c["delay"])
    sc.safety_margin = float(c["safety_margin"])
    sc.time_dilation = None if c["time_dilation"] is None else float(c["time_dilation"])
    sc.gain = None if c["gain"] is None else float(c["gain"])
    sc.levels = None if c["levels"] is None else [float(v) for v in c["levels"]]
    if sc.mode not in ("auto", "manual"):
        raise ConfigError("controller.mode must be 'auto' or 'manual'")
    if sc.mode == "manual" and (sc.time_dilation is None or sc.gain is None):
        raise ConfigError("manual mode needs controller.time_dilation and controller.gain")

    ch = _take(
        top["channel"],
        "channel",
        {
            "gap_min": (True, None),
            "gap_max": (True, None),
            "mode": (False, "periodic"),
            "period": (False, None),
            "seed": (False, None),
            "drop": (False, {}),
        },
    )
    sc.gap_min = float(ch["gap_min"])
    sc.gap_max = float(ch["gap_max"])
    sc.sched_mode = ch["mode"]
    sc.period = None if ch["period"] is None else float(ch["period"])
    sc.sched_seed = None if ch["seed"] is None else int(ch["seed"])
    dr = _take(
        ch["drop"] or {},
        "channel.drop",
        {
            "kind": (False, "none"),
            "pattern": (False, None),
            "p": (False, 0.0),
            "max_consecutive": (False, 0),
            "seed": (False, None),
        },
    )
    sc.drop_kind = dr["kind"]
    sc.drop_pattern = dr["pattern"]
    sc.drop_p = float(dr["p"])
    sc.drop_cap = int(dr["max_consecutive"])
    sc.drop_seed = None if dr["seed"] is None else int(dr["seed"])
    if sc.drop_kind not in ("none", "pattern", "bernoulli"):
        raise ConfigError("channel.drop.kind must be none|pattern|bernoulli")

    s = _take(
        top["sim"],
        "sim",
        {
            "h": (True, None),
            "horizon": (True, None),
            "time_scale": (False, "original"),
            "x0": (True, None),
        },
    )
    sc.h = float(s["h"])
    sc.horizon = float(s["horizon"])
    sc.time_scale = s["time_scale"]
    sc.x0 = [float(v) for v in s["x0"]]

    cd = _take(
        top["codec"], "codec", {"growth": (False, None), "growth_density": (False, None)}
    )
    sc.growth = None if cd["growth"] is None else [float(v) for v in cd["growth"]]
    sc.growth_density = None if cd["growth_density"] is None else int(cd["growth_density"])

    m = _take(
        top["monitors"],
        "monitors",
        {
            "enabled": (False, ["synchrony", "containment"]),
            "decay_start": (False, None),
            "dissipation_start": (False, None),
            "eventual_level": (False, 1),
        },
    )
    sc.monitors = list(m["enabled"])
    sc.decay_start = None if m["decay_start"] is None else float(m["decay_start"])
    sc.dissipation_start = (
        None if m["dissipation_start"] is None else float(m["dissipation_start"])
    )
    sc.eventual_level = int(m["eventual_level"])
    for name in sc.monitors:
        if name not in KNOWN_MONITORS:
            raise ConfigError(f"monitors.enabled: unknown monitor {name!r}")

    _cross_validate(sc)
    return sc


def _cross_validate(sc: Scenario):
    if len(sc.init_box) != sc.n:
        raise ConfigError("plant.init_box length must equal plant.n")
    if len(sc.x0) != sc.n:
        raise ConfigError("sim.x0 length must equal plant.n")
    for ratio, a_name, b_name in (
        (sc.delay / sc.h, "controller.delay", "sim.h"),
        (sc.horizon / sc.h, "sim.horizon", "sim.h"),
    ):
        if abs(ratio - round(ratio)) > 1e-6:
            raise ConfigError(f"{a_name} must be an integer multiple of {b_name}")
    if sc.sched_mode == "periodic":
        period = sc.gap_min if sc.period is None else sc.period
        if abs(period / sc.h - round(period / sc.h)) > 1e-6:
            raise ConfigError("channel.period must be an integer multiple of sim.h")
    if np.any(np.abs(np.asarray(sc.x0)) > np.asarray(sc.init_box)):
        raise ConfigError("sim.x0 lies outside plant.init_box")
    if sc.time_scale not in ("original", "scaled"):
        raise ConfigError("sim.time_scale must be 'original' or 'scaled'")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if isinstance(v, str):
        return '"' + v + '"'
    return str(v)


def render_config(sc: Scenario) -> str:
    """Deterministic TOML for a Scenario; parse(render(sc)) == sc."""
    lines = [f"name = {_fmt(sc.name)}"]
    if sc.seed is not None:
        lines.append(f"seed = {sc.seed}")
    lines += [
        "",
        "[plant]",
        f"n = {sc.n}",
        f"quad_bound = {_fmt(sc.quad_bound)}",
        f"init_box = {_fmt(sc.init_box)}",
    ]
    for i, terms in enumerate(sc.stages, start=1):
        if terms:
            items = ", ".join(
                "{ exps = " + _fmt(t["exps"]) + ", coeff = " + _fmt(t["coeff"]) + " }"
                for t in terms
            )
            lines.append(f"stage{i} = [ {items} ]")
    lines += ["", "[controller]", f'mode = "{sc.mode}"', f"delay = {_fmt(sc.delay)}"]
    if sc.mode == "auto":
        lines.append(f"safety_margin = {_fmt(sc.safety_margin)}")
    if sc.time_dilation is not None:
        lines.append(f"time_dilation = {_fmt(sc.time_dilation)}")
    if sc.gain is not None:
        lines.append(f"gain = {_fmt(sc.gain)}")
    if sc.levels is not None:
        lines.append(f"levels = {_fmt(sc.levels)}")
    lines += [
        "",
        "[channel]",
        f"gap_min = {_fmt(sc.gap_min)}",
        f"gap_max = {_fmt(sc.gap_max)}",
        f'mode = "{sc.sched_mode}"',
    ]
    if sc.period is not None:
        lines.append(f"period = {_fmt(sc.period)}")
    if sc.sched_seed is not None:
        lines.append(f"seed = {sc.sched_seed}")
    lines += ["", "[channel.drop]", f'kind = "{sc.drop_kind}"']
    if sc.drop_pattern is not None:
        lines.append(f"pattern = {_fmt([bool(b) for b in sc.drop_pattern])}")
    if sc.drop_kind == "bernoulli":
        lines.append(f"p = {_fmt(sc.drop_p)}")
        lines.append(f"max_consecutive = {sc.drop_cap}")
        if sc.drop_seed is not None:
            lines.append(f"seed = {sc.drop_seed}")
    lines += [
        "",
        "[sim]",
        f"h = {_fmt(sc.h)}",
        f"horizon = {_fmt(sc.horizon)}",
        f'time_scale = "{sc.time_scale}"',
        f"x0 = {_fmt(sc.x0)}",
    ]
    lines += ["", "[codec]"]
    if sc.growth is not None:
        lines.append(f"growth = {_fmt(sc.growth)}")
    if sc.growth_density is not None:
        lines.append(f"growth_density = {sc.growth_density}")
    lines += ["", "[monitors]", f"enabled = {_fmt(sc.monitors)}"]
    if sc.decay_start is not None:
        lines.append(f"decay_start = {_fmt(sc.decay_start)}")
    if sc.dissipation_start is not None:
        lines.append(f"dissipation_start = {_fmt(sc.dissipation_start)}")
    lines.append(f"eventual_level = {sc.eventual_level}")
    return "\n".join(lines) + "\n"


# -- wiring -----------------------------------------------------------------------


def build(sc: Scenario):
    """Instantiate every component a scenario needs."""
    stages = tuple(
        tuple((tuple(t["exps"]), t["coeff"]) for t in terms) for terms in sc.stages
    ) + tuple(() for _ in range(sc.n - 1 - len(sc.stages)))
    plant = FeedforwardPlant(
        n=sc.n, stages=stages, quad_bound=sc.quad_bound, init_box=np.asarray(sc.init_box)
    )
    if sc.mode == "auto":
        cp = synthesize(sc.n, sc.quad_bound, sc.delay, sc.safety_margin)
    else:
        cp = manual(
            sc.n, sc.quad_bound, sc.delay, sc.time_dilation, sc.gain, levels=sc.levels
        )
    sched_seed = sc.sched_seed if sc.sched_seed is not None else sc.seed
    schedule = generate_schedule(
        sc.gap_min,
        sc.gap_max,
        sc.sched_mode,
        sc.horizon,
        sc.h,
        period=sc.period,
        seed=sched_seed,
    )
    if sc.drop_kind == "none":
        drop = NoDrop()
    elif sc.drop_kind == "pattern":
        drop = PatternDrop(sc.drop_pattern or [])
    else:
        seed = sc.drop_seed if sc.drop_seed is not None else (sc.seed or 0)
        drop = BernoulliDrop(sc.drop_p, seed, sc.drop_cap)
    chan = ChannelModel(schedule=schedule, delay=sc.delay, drop=drop)
    sim = SimConfig(h=sc.h, horizon=sc.horizon, time_scale=sc.time_scale)
    cm = cp.coord_matrix()
    if sc.growth is not None:
        growth = np.asarray(sc.growth, dtype=float)
    else:
        growth = default_growth_constants(
            plant, cp.transform_params(), cm, density=sc.growth_density
        )
    lam = design_contraction(sc.n, growth, chan.effective_gap_bound())
    return plant, cp, chan, sim, np.asarray(sc.x0), cm, lam


def metadata_lines(sc: Scenario, plant, cp, chan, cm, lam) -> list[str]:
    lines = [
        f"scenario = {sc.name}",
        f"mode = {cp.mode}",
        f"n = {cp.n}",
        f"quad_bound = {cp.quad_bound!r}",
        f"time_dilation = {cp.time_dilation!r}",
        f"gain = {cp.gain!r}",
        f"delay = {cp.delay!r}",
        f"scaled_delay = {cp.scaled_delay!r}",
        f"levels = {cp.levels.tolist()!r}",
        f"outer_input_bound = {float(cp.outer_bound)!r}",
        f"curvature_gain = {quad_gain(cp.transform_params())!r}",
        f"seed = {sc.seed!r}",
        f"schedule = {chan.schedule.mode} gaps[{chan.schedule.gap_min},{chan.schedule.gap_max}]",
        f"drop = {chan.drop.describe()}",
        f"effective_gap_bound = {chan.effective_gap_bound()!r}",
        f"growth_constants = {lam.growth.tolist()!r}",
        "delayed_reads = past-stage-arguments (shift-augmented one-step method)",
        "steppers = RK4 (original) / Fehlberg-5 (scaled oracle)",
    ]
    for i in range(cp.n):
        lines.append(f"coord_matrix.row{i + 1} = {cm.mat[i].tolist()!r}")
    for i in range(cp.n):
        lines.append(f"contraction.row{i + 1} = {lam.mat[i].tolist()!r}")
    lines.append("admissibility:")
    for cond in admissibility_report(cp):
        lines.append("  " + cond.render())
    data = analysis.build_cascade_data(cp)
    lines.append(f"lyap_residual = {data.residual!r}")
    for name, lhs, rhs, ok in analysis.cascade_conditions(data):
        lines.append(f"  {name}: {lhs:.6g} <= {rhs:.6g}  [{'ok' if ok else 'VIOLATED'}]")
    return lines


# -- monitors ----------------------------------------------------------------------


def run_monitors(sc: Scenario, trace_or_scaled, cp, cm) -> analysis.MonitorReport:
    checks = []
    if sc.time_scale == "original":
        trace = trace_or_scaled
        scaled = (
            to_scaled(cp.transform_params(), cm, trace)
            if trace.delay_steps > 0
            else None
        )
    else:
        trace = None
        scaled = trace_or_scaled
    entry = None
    for name in sc.monitors:
        if name == "synchrony":
            if trace is None:
                checks.append(
                    analysis.CheckResult(
                        "synchrony", "skip", details={"note": "scaled run has no replicas"}
                    )
                )
            else:
                checks.append(analysis.check_synchrony(trace))
        elif name == "containment":
            if scaled is None:
                checks.append(
                    analysis.CheckResult(
                        "containment", "skip", details={"note": "needs a delayed run"}
                    )
                )
            else:
                checks.append(analysis.check_containment(scaled))
        elif name == "linear_region":
            if scaled is None:
                checks.append(
                    analysis.CheckResult(
                        "linear_region", "skip", details={"note": "needs a delayed run"}
                    )
                )
            else:
                res = analysis.detect_linear_region(scaled, cp)
                entry = res.details.get("entry_time") if res.status == "pass" else None
                checks.append(res)
        elif name == "dissipation":
            if scaled is None:
                checks.append(
                    analysis.CheckResult(
                        "dissipation", "skip", details={"note": "needs a delayed run"}
                    )
                )
            else:
                data = analysis.build_cascade_data(cp)
                start = sc.dissipation_start
                if start is None and entry is not None:
                    start = entry + 2 * cp.scaled_delay
                checks.append(analysis.check_dissipation(data, scaled, cp, start=start))
        elif name == "decay":
            target = trace if trace is not None else scaled
            start = sc.decay_start
            if start is None and entry is not None and trace is not None:
                start = entry * cp.time_dilation
            elif start is None and entry is not None:
                start = entry
            fit = analysis.fit_exponential(target, start=start)
            checks.append(
                analysis.CheckResult(
                    name="decay",
                    status="pass" if fit.passed else "fail",
                    worst=fit.delta,
                    details={
                        "delta": fit.delta,
                        "residual": fit.residual,
                        "overshoot": fit.overshoot,
                        "n_points": fit.n_points,
                    },
                )
            )
        elif name == "eventual_bound":
            if scaled is None:
                checks.append(
                    analysis.CheckResult(
                        "eventual_bound", "skip", details={"note": "needs a delayed run"}
                    )
                )
            else:
                lam_s, mu_s, e_s, start = measure_disturbances(
                    scaled, cp, sc.eventual_level, entry
                )
                checks.append(
                    analysis.check_boundedness_thresholds(
                        scaled, cp, sc.eventual_level, lam_s, mu_s, e_s, start=start
                    )
                )
    return analysis.MonitorReport(checks)


def measure_disturbances(scaled, cp, level: int, entry: float | None):
    """Empirical disturbance bounds feeding the eventual-bound check.

    lambda*: sup of the inner nest value below ``level``; e*: sup of the
    level's tracking-error component; mu*: sup of the finite-difference
    residual of the level's flow against its pure saturation part.
    """
    i0 = scaled.i_start
    start = entry if entry is not None else scaled.r0 + i0 * scaled.h
    js = max(scaled.index_of(start), i0)
    # the hypothesis grants a free settling time: measure from the earliest
    # instant after which the level's tracking error stays under level/30
    eps_gate = cp.levels[level - 1] / 30.0
    mag = np.abs(scaled.track_err[:, level - 1])
    suffix_ok = np.logical_and.accumulate((mag <= eps_gate)[::-1])[::-1]
    settled = np.nonzero(suffix_ok[js:])[0]
    if settled.size:
        js = js + int(settled[0])
        start = scaled.r0 + js * scaled.h
    args_all = analysis.nest_arguments(scaled, cp)  # rows for grid i0..N
    args = args_all[js - i0 :]
    npts = scaled.state.shape[0]
    w_rows = scaled.track_err[js:] + scaled.state[js - scaled.delay_steps : npts - scaled.delay_steps]
    inner = args[:, level - 1] - w_rows[:, level - 1]
    lam_s = float(np.max(np.abs(inner))) if inner.size else 0.0
    e_s = float(np.max(np.abs(scaled.track_err[js:, level - 1])))
    zl = scaled.state[:, level - 1]
    jumps = set(int(j) for j in scaled.jump_indices())
    resid = []
    for j in range(js, npts - 1):
        if j + 1 in jumps or j in jumps:
            continue
        fd = (zl[j + 1] - zl[j]) / scaled.h
        sat_part = -float(saturation(args_all[j - i0, level - 1], cp.levels[level - 1]))
        resid.append(fd - sat_part)
    mu_s = float(np.max(np.abs(resid))) if resid else 0.0
    return lam_s, mu_s, e_s, start


# -- artifacts ---------------------------------------------------------------------


def _vector_cols(prefix: str, n: int) -> list[str]:
    return [f"{prefix}_{i + 1}" for i in range(n)]


def write_trace_csv(trace: Trace, path: Path):
    n = trace.n
    header = (
        ["t"]
        + _vector_cols("x", n)
        + _vector_cols("replica", n)
        + _vector_cols("estimate", n)
        + _vector_cols("cell", n)
        + _vector_cols("dec_estimate", n)
        + _vector_cols("dec_cell", n)
        + ["u"]
    )
    body = np.column_stack(
        [
            trace.times,
            trace.x,
            trace.replica,
            trace.estimate,
            trace.cell,
            trace.dec_estimate,
            trace.dec_cell,
            trace.u,
        ]
    )
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in body:
            w.writerow([repr(float(v)) for v in row])


def write_scaled_csv(st, path: Path):
    n = st.n
    header = (
        ["r"]
        + _vector_cols("state", n)
        + _vector_cols("track_err", n)
        + _vector_cols("cell", n)
        + ["control"]
    )
    body = np.column_stack([st.times, st.state, st.track_err, st.cell, st.control])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in body:
            w.writerow([repr(float(v)) for v in row])


_EVENT_FIELDS = ("x", "estimate", "cell", "dec_estimate", "dec_cell", "replica", "track_err")


def write_events_csv(events, path: Path):
    header = ["kind", "k", "index", "time", "symbols"]
    for f in _EVENT_FIELDS:
        header += [f"pre_{f}", f"post_{f}"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for ev in events:
            row = [
                ev.kind,
                ev.k,
                ev.index,
                repr(float(ev.time)),
                ";".join(str(int(s)) for s in ev.symbols) if ev.symbols is not None else "",
            ]
            for f in _EVENT_FIELDS:
                for side in (ev.pre, ev.post):
                    val = side.get(f)
                    row.append("" if val is None else ";".join(repr(float(v)) for v in val))
            w.writerow(row)


def read_events_csv(path: Path) -> list[Event]:
    events = []
    with path.open() as fh:
        rd = csv.DictReader(fh)
        for row in rd:
            pre, post = {}, {}
            for f in _EVENT_FIELDS:
                if row.get(f"pre_{f}"):
                    pre[f] = np.array([float(v) for v in row[f"pre_{f}"].split(";")])
                if row.get(f"post_{f}"):
                    post[f] = np.array([float(v) for v in row[f"post_{f}"].split(";")])
            events.append(
                Event(
                    kind=row["kind"],
                    k=int(row["k"]),
                    index=int(row["index"]),
                    time=float(row["time"]),
                    pre=pre,
                    post=post,
                    symbols=(
                        np.array([int(v) for v in row["symbols"].split(";")], dtype=np.int8)
                        if row["symbols"]
                        else None
                    ),
                )
            )
    return events


def write_packets_csv(packets, path: Path):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "t_sent", "t_delivered", "symbols", "bits"])
        for p in packets:
            w.writerow(
                [
                    p.k,
                    repr(float(p.t_sent)),
                    repr(float(p.t_delivered)),
                    ";".join(str(int(s)) for s in p.symbols),
                    p.bits,
                ]
            )


def read_scaled_csv(path: Path, delay_steps: int, events=None):
    from .traces import ScaledTrace

    with path.open() as fh:
        rd = csv.reader(fh)
        header = next(rd)
        body = np.array([[float(v) for v in row] for row in rd])
    n = sum(1 for c in header if c.startswith("state_"))
    cols = {c: i for i, c in enumerate(header)}

    def block(prefix):
        return body[:, [cols[f"{prefix}_{i + 1}"] for i in range(n)]]

    r = body[:, cols["r"]]
    return ScaledTrace(
        h=float(r[1] - r[0]) if r.size > 1 else 1.0,
        r0=float(r[0]),
        n=n,
        delay_steps=delay_steps,
        state=block("state"),
        track_err=block("track_err"),
        cell=block("cell"),
        control=body[:, cols["control"]],
        i_start=delay_steps,
        events=events or [],
    )


def read_trace_csv(path: Path, delay_steps: int, events=None, packets=None) -> Trace:
    with path.open() as fh:
        rd = csv.reader(fh)
        header = next(rd)
        body = np.array([[float(v) for v in row] for row in rd])
    n = sum(1 for c in header if c.startswith("x_"))
    cols = {c: i for i, c in enumerate(header)}

    def block(prefix):
        return body[:, [cols[f"{prefix}_{i + 1}"] for i in range(n)]]

    t = body[:, cols["t"]]
    return Trace(
        h=float(t[1] - t[0]) if t.size > 1 else 1.0,
        t0=float(t[0]),
        n=n,
        delay_steps=delay_steps,
        x=block("x"),
        replica=block("replica"),
        estimate=block("estimate"),
        cell=block("cell"),
        dec_estimate=block("dec_estimate"),
        dec_cell=block("dec_cell"),
        u=body[:, cols["u"]],
        events=events or [],
        packets=packets or [],
    )


# -- verbs -------------------------------------------------------------------------


def run_scenario(sc: Scenario, outdir: Path) -> int:
    """Simulate, monitor, and write artifacts; 0 iff everything passed."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    plant, cp, chan, sim, x0, cm, lam = build(sc)
    try:
        if sc.time_scale == "original":
            result = run(plant, cp, chan, sim, x0, cm=cm, lam=lam)
            write_trace_csv(result, outdir / "trace.csv")
            write_packets_csv(result.packets, outdir / "packets.csv")
        else:
            result = run_scaled(plant, cp, chan, sim, x0, cm=cm, lam=lam)
            write_scaled_csv(result, outdir / "scaled.csv")
        write_events_csv(result.events, outdir / "events.csv")
    except ZoomsatError as exc:
        (outdir / "monitors.txt").write_text(f"[FAIL] simulation: {exc}\n")
        (outdir / "metadata.txt").write_text(
            "\n".join(metadata_lines(sc, plant, cp, chan, cm, lam)) + "\n"
        )
        print(f"simulation failed: {exc}", file=sys.stderr)
        return 2
    report = run_monitors(sc, result, cp, cm)
    lines = [report.render(), ""]
    if sc.time_scale == "original" and len(result.packets) >= 2:
        acct = measure_rate(result.packets)
        lines.append(
            f"rate = {acct.rate!r} bits/time (bits_sent={acct.bits_sent}, "
            f"span=[{acct.t_first},{acct.t_last}])"
        )
    lines += report.records()
    (outdir / "monitors.txt").write_text("\n".join(lines) + "\n")
    (outdir / "metadata.txt").write_text(
        "\n".join(metadata_lines(sc, plant, cp, chan, cm, lam)) + "\n"
    )
    print(report.render())
    return 0 if report.ok else 1


def dry_run(sc: Scenario) -> str:
    plant, cp, chan, sim, x0, cm, lam = build(sc)
    return "\n".join(metadata_lines(sc, plant, cp, chan, cm, lam))


def set_axis(sc: Scenario, axis: str, value: float) -> Scenario:
    """Return a copy of the scenario with one dotted numeric field replaced.

    The synthetic axis ``channel.T`` sets gap_min, gap_max, and the period
    together (a strictly periodic schedule swept over its period).
    """
    out = copy.deepcopy(sc)
    if axis == "channel.T":
        out.gap_min = out.gap_max = out.period = value
        _cross_validate(out)
        return out
    alias = {
        "channel.gap_min": "gap_min",
        "channel.gap_max": "gap_max",
        "channel.period": "period",
        "controller.delay": "delay",
        "controller.time_dilation": "time_dilation",
        "controller.gain": "gain",
        "sim.h": "h",
        "sim.horizon": "horizon",
    }
    field_name = alias.get(axis, axis)
    if not hasattr(sc, field_name):
        raise ConfigError(f"unknown sweep axis {axis!r}")
    setattr(out, field_name, value)
    _cross_validate(out)
    return out


def sweep(sc: Scenario, axis: str, values, outdir: Path | None = None):
    """Run one scenario per value concurrently; errors are isolated per row.

    Rows carry the measured average data rate, the fitted decay rate, and the
    monitor outcome.  Sweeps always integrate in original time (the rate
    column needs the packet log).
    """
    scenarios = [set_axis(sc, axis, v) for v in values]

    def one(scv: Scenario):
        try:
            plant, cp, chan, sim, x0, cm, lam = build(scv)
            trace = run(plant, cp, chan, sim, x0, cm=cm, lam=lam)
        except ZoomsatError as exc:
            return {"error": str(exc)}
        report = run_monitors(scv, trace, cp, cm)
        rate = (
            measure_rate(trace.packets).rate if len(trace.packets) >= 2 else float("nan")
        )
        try:
            fit = analysis.fit_exponential(trace)
            delta = fit.delta
        except ZoomsatError:
            delta = float("nan")
        return {
            "rate": rate,
            "decay": delta,
            "monitors": "pass" if report.ok else "fail",
        }

    rows = []
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, len(values))) as ex:
        for v, res in zip(values, ex.map(one, scenarios)):
            res = {"value": v, **res}
            rows.append(res)
    if outdir is not None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        with (outdir / "sweep.csv").open("w", newline="") as fh:
            keys = ["value", "rate", "decay", "monitors", "error"]
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            for r in rows:
                w.writerow({k: r.get(k, "") for k in keys})
    return rows


def check_artifacts(sc: Scenario, artifact_dir: Path) -> int:
    """Re-run monitors against trace/events CSVs written earlier."""
    artifact_dir = Path(artifact_dir)
    plant, cp, chan, sim, x0, cm, lam = build(sc)
    d = int(round(sc.delay / sc.h))
    events_path = artifact_dir / "events.csv"
    events = read_events_csv(events_path) if events_path.exists() else []
    if sc.time_scale == "scaled":
        result = read_scaled_csv(artifact_dir / "scaled.csv", delay_steps=d, events=events)
    else:
        result = read_trace_csv(artifact_dir / "trace.csv", delay_steps=d, events=events)
    report = run_monitors(sc, result, cp, cm)
    print(report.render())
    return 0 if report.ok else 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="zoomsat",
        description="quantized delayed-feedback control simulator",
    )
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb in ("run", "dry-run", "check", "sweep"):
        p = sub.add_parser(verb)
        p.add_argument("--config", required=True, type=Path)
        if verb in ("run", "sweep"):
            p.add_argument("--out", type=Path, default=Path("out"))
        if verb == "check":
            p.add_argument("--artifacts", type=Path, required=True)
        if verb == "sweep":
            p.add_argument("--axis", required=True)
            p.add_argument("--values", required=True, help="comma-separated numbers")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--time-scale", choices=("original", "scaled"), default=None)
    args = ap.parse_args(argv)
    try:
        sc = parse_config(Path(args.config).read_text())
        if args.seed is not None:
            sc.seed = args.seed
        if args.time_scale is not None:
            sc.time_scale = args.time_scale
        if args.verb == "run":
            return run_scenario(sc, args.out)
        if args.verb == "dry-run":
            print(dry_run(sc))
            return 0
        if args.verb == "check":
            return check_artifacts(sc, args.artifacts)
        if args.verb == "sweep":
            values = [float(v) for v in args.values.split(",") if v]
            rows = sweep(sc, args.axis, values, outdir=args.out)
            for row in rows:
                print(row)
            return 0 if all("error" not in r or not r["error"] for r in rows) else 1
    except ZoomsatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
