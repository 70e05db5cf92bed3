"""Perception-and-action loop for an interactive hugging robot."""

from .core import (
    EngineParams,
    GestureClass,
    GestureInterval,
    HugRecording,
    SensorSample,
    load_params,
    validate_recording,
)

__all__ = [
    "EngineParams",
    "GestureClass",
    "GestureInterval",
    "HugRecording",
    "SensorSample",
    "load_params",
    "validate_recording",
]

__version__ = "0.1.0"
