"""Deterministic simulator for zoom-in quantized control of feedforward
systems over a delayed finite-rate channel."""

from . import analysis, channel, codec, controller, plant, transforms
from .channel import ChannelModel, generate_schedule, measure_rate
from .cli import Scenario, build, parse_config, render_config, run_scenario
from .codec import design_contraction, serialize_packet, deserialize_packet
from .controller import ControllerParams, manual, synthesize
from .hybridsim import SimConfig, run, run_scaled
from .plant import FeedforwardPlant, integrator_chain
from .traces import ScaledTrace, Trace
from .transforms import TransformParams, build_coord_matrix, saturation, to_scaled

__all__ = [
    "analysis",
    "channel",
    "codec",
    "controller",
    "plant",
    "transforms",
    "ChannelModel",
    "generate_schedule",
    "measure_rate",
    "Scenario",
    "build",
    "parse_config",
    "render_config",
    "run_scenario",
    "design_contraction",
    "serialize_packet",
    "deserialize_packet",
    "ControllerParams",
    "manual",
    "synthesize",
    "SimConfig",
    "run",
    "run_scaled",
    "FeedforwardPlant",
    "integrator_chain",
    "ScaledTrace",
    "Trace",
    "TransformParams",
    "build_coord_matrix",
    "saturation",
    "to_scaled",
]

__version__ = "0.1.0"
