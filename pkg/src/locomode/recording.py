"""Trial data model: sEMG and plantar-pressure recordings, ground-truth mode
annotations, transition events, and their on-disk persistence.

All types validate their invariants on construction and again on load, so a
file that deserializes is guaranteed structurally sound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .container import ContainerError, read_container, write_container
from .modes import MUSCLE_NAMES, GaitEventKind, LocomotionMode, TransitionKind

EMG_SAMPLE_RATE = 1200
PRESSURE_SAMPLE_RATE = 40
WINDOW_SAMPLES = 1200

__all__ = [
    "ValidationError",
    "EmgRecording",
    "PressureRecording",
    "Segment",
    "ModeAnnotation",
    "TransitionEvent",
    "Trial",
    "save_trial",
    "load_trial",
]


class ValidationError(ValueError):
    """A domain invariant does not hold."""


@dataclass(frozen=True)
class EmgRecording:
    """One continuous 8-channel sEMG recording at 1200 Hz."""

    subject_id: str
    trial_id: str
    samples: np.ndarray  # (T, 8) float32, arbitrary amplitude units
    sample_rate: int = EMG_SAMPLE_RATE
    channel_names: tuple[str, ...] = MUSCLE_NAMES

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float32)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 2 or samples.shape[1] != len(MUSCLE_NAMES):
            raise ValidationError(f"emg: channel count must be {len(MUSCLE_NAMES)}, got shape {samples.shape}")
        if len(self.channel_names) != samples.shape[1]:
            raise ValidationError("emg: channel_names length mismatch")
        if samples.shape[0] < WINDOW_SAMPLES:
            raise ValidationError(f"emg: need at least {WINDOW_SAMPLES} samples, got {samples.shape[0]}")
        if not np.all(np.isfinite(samples)):
            raise ValidationError("emg: non-finite samples")

    @property
    def n_samples(self) -> int:
        return int(self.samples.shape[0])


@dataclass(frozen=True)
class PressureRecording:
    """Heel and toe plantar-pressure traces at 40 Hz."""

    heel: np.ndarray
    toe: np.ndarray
    sample_rate: int = PRESSURE_SAMPLE_RATE

    def __post_init__(self) -> None:
        heel = np.asarray(self.heel, dtype=np.float32).ravel()
        toe = np.asarray(self.toe, dtype=np.float32).ravel()
        object.__setattr__(self, "heel", heel)
        object.__setattr__(self, "toe", toe)
        if heel.shape != toe.shape:
            raise ValidationError("pressure: heel and toe must have equal length")
        if not (np.all(np.isfinite(heel)) and np.all(np.isfinite(toe))):
            raise ValidationError("pressure: non-finite samples")
        if np.any(heel < 0) or np.any(toe < 0):
            raise ValidationError("pressure: negative values")


@dataclass(frozen=True)
class Segment:
    """Half-open span [start, end) of one locomotion mode, at 1200 Hz."""

    mode: LocomotionMode
    start: int
    end: int


@dataclass(frozen=True)
class ModeAnnotation:
    """Contiguous, non-overlapping mode segments covering [0, T)."""

    segments: tuple[Segment, ...]

    def __post_init__(self) -> None:
        segments = tuple(self.segments)
        object.__setattr__(self, "segments", segments)
        if not segments:
            raise ValidationError("annotation: no segments")
        if segments[0].start != 0:
            raise ValidationError("annotation: first segment must start at 0")
        for seg in segments:
            if seg.end <= seg.start:
                raise ValidationError(f"annotation: empty or inverted segment at {seg.start}")
        for prev, cur in zip(segments, segments[1:]):
            if cur.start < prev.end:
                raise ValidationError("annotation: segments overlap")
            if cur.start > prev.end:
                raise ValidationError(f"annotation: gap between {prev.end} and {cur.start}")

    @property
    def n_samples(self) -> int:
        return self.segments[-1].end

    def mode_at(self, sample: int) -> LocomotionMode:
        if not 0 <= sample < self.n_samples:
            raise IndexError(f"sample {sample} outside [0, {self.n_samples})")
        for seg in self.segments:
            if sample < seg.end:
                return seg.mode
        raise AssertionError("unreachable: segments cover [0, T)")

    def mode_track(self) -> np.ndarray:
        """Per-sample mode codes as an int8 vector of length T."""
        track = np.empty(self.n_samples, dtype=np.int8)
        for seg in self.segments:
            track[seg.start:seg.end] = int(seg.mode)
        return track


@dataclass(frozen=True)
class TransitionEvent:
    """A tracked mode transition anchored at its critical gait event."""

    kind: TransitionKind
    transition_point: int  # sample index at 1200 Hz
    source_event: GaitEventKind

    def __post_init__(self) -> None:
        if self.transition_point < 0:
            raise ValidationError("transition: negative transition_point")
        if self.source_event is not self.kind.event:
            raise ValidationError(
                f"transition {self.kind}: source event {self.source_event} "
                f"does not match required {self.kind.event}"
            )


@dataclass(frozen=True)
class Trial:
    """One continuous recording with its annotations and transition events."""

    emg: EmgRecording
    pressure: PressureRecording
    annotation: ModeAnnotation
    transitions: tuple[TransitionEvent, ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "transitions", tuple(self.transitions))
        t_total = self.emg.n_samples
        if self.annotation.n_samples != t_total:
            raise ValidationError(
                f"annotation covers {self.annotation.n_samples} samples, emg has {t_total}"
            )
        points = [ev.transition_point for ev in self.transitions]
        if points != sorted(points):
            raise ValidationError("transitions not sorted by transition_point")
        if points and points[-1] >= t_total:
            raise ValidationError("transition_point beyond trial end")
        boundaries = {
            seg_next.start: (seg.mode, seg_next.mode)
            for seg, seg_next in zip(self.annotation.segments, self.annotation.segments[1:])
        }
        for ev in self.transitions:
            pair = boundaries.get(ev.transition_point)
            if pair is None:
                raise ValidationError(
                    f"transition {ev.kind} at {ev.transition_point} is not on a segment boundary"
                )
            if pair != (ev.kind.source, ev.kind.target):
                raise ValidationError(
                    f"transition {ev.kind} at {ev.transition_point} does not match "
                    f"annotation boundary modes {pair[0].name}->{pair[1].name}"
                )

    @property
    def trial_id(self) -> str:
        return self.emg.trial_id


def save_trial(trial: Trial, path) -> None:
    """Persist a trial; reload reproduces it bit-exactly."""
    metadata = {
        "kind": "trial",
        "subject_id": trial.emg.subject_id,
        "trial_id": trial.emg.trial_id,
        "emg_sample_rate": trial.emg.sample_rate,
        "pressure_sample_rate": trial.pressure.sample_rate,
        "channel_names": list(trial.emg.channel_names),
        "segments": [[int(s.mode), s.start, s.end] for s in trial.annotation.segments],
        "transitions": [
            [ev.kind.name, ev.transition_point, ev.source_event.value] for ev in trial.transitions
        ],
        "meta": trial.meta,
    }
    arrays = {
        "emg": trial.emg.samples,
        "heel": trial.pressure.heel,
        "toe": trial.pressure.toe,
    }
    write_container(path, metadata, arrays)


def load_trial(path) -> Trial:
    """Load and fully re-validate a trial file."""
    metadata, arrays = read_container(path)
    if metadata.get("kind") != "trial":
        raise ContainerError(f"{path} is not a trial file")
    for name in ("emg", "heel", "toe"):
        if name not in arrays:
            raise ContainerError(f"trial file missing array {name!r}")
    try:
        emg = EmgRecording(
            subject_id=metadata["subject_id"],
            trial_id=metadata["trial_id"],
            samples=arrays["emg"],
            sample_rate=int(metadata["emg_sample_rate"]),
            channel_names=tuple(metadata["channel_names"]),
        )
        pressure = PressureRecording(
            heel=arrays["heel"],
            toe=arrays["toe"],
            sample_rate=int(metadata["pressure_sample_rate"]),
        )
        annotation = ModeAnnotation(
            tuple(
                Segment(LocomotionMode(code), int(start), int(end))
                for code, start, end in metadata["segments"]
            )
        )
        transitions = tuple(
            TransitionEvent(TransitionKind[name], int(point), GaitEventKind(event))
            for name, point, event in metadata["transitions"]
        )
        return Trial(emg, pressure, annotation, transitions, meta=metadata.get("meta", {}))
    except (KeyError, TypeError) as exc:
        raise ContainerError(f"trial file {path} has malformed metadata: {exc}") from exc
