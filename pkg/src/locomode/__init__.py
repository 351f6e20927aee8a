"""Continuous locomotion-mode prediction from 8-channel sEMG."""

__version__ = "0.1.0"

from .modes import (
    CHANNEL_CONFIGS,
    MUSCLE_GROUPS,
    MUSCLE_NAMES,
    GaitEventKind,
    LocomotionMode,
    TransitionKind,
    mode_sequence_of_paradigm,
)
from .recording import (
    EmgRecording,
    ModeAnnotation,
    PressureRecording,
    Segment,
    Trial,
    TransitionEvent,
    ValidationError,
    load_trial,
    save_trial,
)
from .synth import SynthConfig, generate_dataset, generate_trial

__all__ = [
    "CHANNEL_CONFIGS",
    "MUSCLE_GROUPS",
    "MUSCLE_NAMES",
    "GaitEventKind",
    "LocomotionMode",
    "TransitionKind",
    "mode_sequence_of_paradigm",
    "EmgRecording",
    "ModeAnnotation",
    "PressureRecording",
    "Segment",
    "Trial",
    "TransitionEvent",
    "ValidationError",
    "load_trial",
    "save_trial",
    "SynthConfig",
    "generate_dataset",
    "generate_trial",
]
