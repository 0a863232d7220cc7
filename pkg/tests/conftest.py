import numpy as np
import pytest

from zoomsat import (
    ChannelModel,
    FeedforwardPlant,
    SimConfig,
    generate_schedule,
    integrator_chain,
    manual,
    synthesize,
)
from zoomsat.channel import PatternDrop
from zoomsat.hybridsim import run, run_scaled
from zoomsat.transforms import to_scaled


def make_a1(horizon=200.0, h=0.1, delay=0.3):
    """n=1 integrator, mild manual parameters, delay = 3h."""
    plant = integrator_chain(1, init_box=[0.01])
    cp = manual(1, 1.0, delay, 1.0, 0.5)
    sched = generate_schedule(1.0, 1.0, "periodic", horizon, h)
    chan = ChannelModel(schedule=sched, delay=delay)
    sim = SimConfig(h=h, horizon=horizon)
    return plant, cp, chan, sim, np.array([0.009])


def make_a1_auto(horizon=200.0, h=1e-4):
    """n=1 integrator with fully synthesized parameters, tiny delay."""
    plant = integrator_chain(1, init_box=[1e-4])
    cp = synthesize(1, 1.0, 1e-4)
    sched = generate_schedule(1.0, 1.0, "periodic", horizon, h)
    chan = ChannelModel(schedule=sched, delay=1e-4)
    sim = SimConfig(h=h, horizon=horizon)
    return plant, cp, chan, sim, np.array([0.9e-4])


def make_a2(h=0.05, horizon=30.0):
    """n=2 with one quadratic stage, delay spanning 2.5 sampling intervals."""
    box = 2e-6
    plant = FeedforwardPlant(
        n=2, stages=((((2,), 0.5),),), quad_bound=1.0, init_box=[box, box]
    )
    cp = manual(2, 1.0, 2.5, 30.0, 0.5)
    sched = generate_schedule(1.0, 1.0, "periodic", horizon, h)
    chan = ChannelModel(schedule=sched, delay=2.5)
    sim = SimConfig(h=h, horizon=horizon)
    return plant, cp, chan, sim, np.array([0.9 * box, 0.9 * box])


def make_a3(horizon=60.0, h=0.05):
    """n=2 chain with alternate-sample drops; contraction sized for the doubled gap."""
    plant = integrator_chain(2, init_box=[0.01, 0.01])
    cp = manual(2, 1.0, 0.5, 2.0, 0.5)
    sched = generate_schedule(1.0, 1.0, "periodic", horizon, h)
    chan = ChannelModel(schedule=sched, delay=0.5, drop=PatternDrop([False, True]))
    sim = SimConfig(h=h, horizon=horizon)
    return plant, cp, chan, sim, np.array([0.009, 0.009])


def make_rate(period: float, horizon=1e4, h=0.25):
    """n=2 chain on a long horizon for data-rate accounting."""
    plant = integrator_chain(2, init_box=[1e-3, 1e-3])
    cp = manual(2, 1.0, 0.5, 1.0, 0.5)
    sched = generate_schedule(period, period, "periodic", horizon, h, period=period)
    chan = ChannelModel(schedule=sched, delay=0.5)
    sim = SimConfig(h=h, horizon=horizon)
    return plant, cp, chan, sim, np.array([0.9e-3, 0.9e-3])


def run_bundle(parts):
    plant, cp, chan, sim, x0 = parts
    trace = run(plant, cp, chan, sim, x0)
    scaled = to_scaled(cp.transform_params(), cp.coord_matrix(), trace)
    return {
        "plant": plant,
        "cp": cp,
        "chan": chan,
        "sim": sim,
        "x0": x0,
        "trace": trace,
        "scaled": scaled,
    }


@pytest.fixture(scope="session")
def a1():
    return run_bundle(make_a1())


@pytest.fixture(scope="session")
def a1_auto():
    return run_bundle(make_a1_auto())


@pytest.fixture(scope="session")
def a2():
    return run_bundle(make_a2())


@pytest.fixture(scope="session")
def a2_oracle(a2):
    plant, cp, sim, x0 = a2["plant"], a2["cp"], a2["sim"], a2["x0"]
    sched = generate_schedule(1.0, 1.0, "periodic", sim.horizon, sim.h)
    chan = ChannelModel(schedule=sched, delay=cp.delay)
    return run_scaled(plant, cp, chan, sim, x0)


@pytest.fixture(scope="session")
def a3():
    return run_bundle(make_a3())
