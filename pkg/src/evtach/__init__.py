"""Rotational speed estimation from event-camera streams."""

from .estimator import EstimatorParams, SpeedEstimate, estimate_speed, rmae
from .events import EventSlice, EventStream, SlicingParams, embed, load_events, slice_stream, store_events
from .simulator import PropellerSpec, SceneSpec, quad_propeller_scene, simulate, single_propeller_scene

__all__ = [
    "EstimatorParams",
    "EventSlice",
    "EventStream",
    "PropellerSpec",
    "SceneSpec",
    "SlicingParams",
    "SpeedEstimate",
    "embed",
    "estimate_speed",
    "load_events",
    "quad_propeller_scene",
    "rmae",
    "simulate",
    "single_propeller_scene",
    "slice_stream",
    "store_events",
]

__version__ = "0.1.0"
