"""Signal conditioning and gait-event extraction.

sEMG path: causal bandpass (20-500 Hz) then notch (50 Hz), full-wave
rectification, and per-channel z-normalization whose statistics are fitted
on training data only.

Pressure path: linear upsampling of heel/toe traces to the sEMG rate,
min-max normalization and averaging into a mean plantar pressure signal,
debounced thresholding into a contact vector, and edge detection into
heel-contact / toe-off events. Transition points are the Table-style
critical event nearest each annotated mode boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .filters import BiquadCascade, design_bandpass, design_notch, filter_forward
from .modes import GaitEventKind, TransitionKind
from .recording import ModeAnnotation, TransitionEvent, ValidationError

EMG_BAND = (20.0, 500.0)
EMG_FILTER_ORDER = 8
NOTCH_HZ = 50.0
NOTCH_BANDWIDTH = 2.0
CONTACT_THRESHOLD = 0.5
DEBOUNCE_MS = 50.0

__all__ = [
    "ChannelStats",
    "GaitEventTrack",
    "rectify",
    "fit_channel_stats",
    "apply_normalization",
    "condition_emg",
    "upsample_linear",
    "mean_pressure",
    "binarize_contact",
    "detect_gait_events",
    "derive_transition_points",
    "default_emg_cascades",
]


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean and population standard deviation."""

    mean: np.ndarray  # (C,)
    sd: np.ndarray    # (C,)

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64).ravel()
        sd = np.asarray(self.sd, dtype=np.float64).ravel()
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "sd", sd)
        if mean.shape != sd.shape:
            raise ValidationError("stats: mean/sd shape mismatch")
        if np.any(sd <= 0):
            raise ValidationError("stats: zero variance channel")


@dataclass(frozen=True)
class GaitEventTrack:
    """Ordered heel-contact / toe-off events at 1200 Hz."""

    events: tuple[tuple[GaitEventKind, int], ...]

    def __post_init__(self) -> None:
        events = tuple(self.events)
        object.__setattr__(self, "events", events)
        last = -1
        for kind, idx in events:
            if idx <= last:
                raise ValidationError("gait events: indices not strictly increasing")
            last = idx
        for (k1, _), (k2, _) in zip(events, events[1:]):
            if k1 is k2:
                raise ValidationError(f"gait events: consecutive {k1} without alternation")

    def of_kind(self, kind: GaitEventKind) -> np.ndarray:
        return np.array([idx for k, idx in self.events if k is kind], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.events)


def rectify(x: np.ndarray) -> np.ndarray:
    """Full-wave rectification (elementwise absolute value)."""
    return np.abs(x)


def fit_channel_stats(samples: np.ndarray) -> ChannelStats:
    """Fit per-channel mean/sd (population estimator) on training samples.

    ``samples`` is (T, C); pass the concatenation of training trials only,
    never validation or test data.
    """
    samples = np.asarray(samples)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise ValidationError("stats: need a (T, C) matrix with T >= 2")
    mean = samples.mean(axis=0, dtype=np.float64)
    sd = samples.std(axis=0, dtype=np.float64)  # ddof=0, fixed for determinism
    if np.any(sd <= 0):
        raise ValidationError("stats: zero variance channel")
    return ChannelStats(mean, sd)


def apply_normalization(samples: np.ndarray, stats: ChannelStats) -> np.ndarray:
    """Per-channel (x - mean) / sd, returned as float32."""
    out = (np.asarray(samples, dtype=np.float64) - stats.mean) / stats.sd
    return out.astype(np.float32)


def default_emg_cascades(fs: float = 1200.0, notch_enabled: bool = True) -> list[BiquadCascade]:
    """The standard sEMG conditioning cascades in application order."""
    cascades = [design_bandpass(fs, EMG_BAND[0], EMG_BAND[1], EMG_FILTER_ORDER)]
    if notch_enabled:
        cascades.append(design_notch(fs, NOTCH_HZ, NOTCH_BANDWIDTH))
    return cascades


def condition_emg(samples: np.ndarray, cascades: list[BiquadCascade]) -> np.ndarray:
    """Filter (causally, in cascade order) then rectify; no normalization."""
    out = np.asarray(samples, dtype=np.float64)
    for cascade in cascades:
        out = filter_forward(out, cascade)
    return rectify(out).astype(np.float32)


def upsample_linear(series: np.ndarray, factor: int = 30) -> np.ndarray:
    """Linear interpolation by an integer factor.

    Output length is (len(series) - 1) * factor + 1; original samples are
    reproduced exactly at multiples of ``factor`` and interior points use
    the exact fraction k/factor, so ramps between round values threshold
    predictably.
    """
    series = np.asarray(series, dtype=np.float64).ravel()
    if series.size < 2:
        raise ValidationError("upsample: need at least 2 samples")
    frac = np.arange(factor, dtype=np.float64) / factor
    blocks = series[:-1, None] + np.diff(series)[:, None] * frac[None, :]
    return np.append(blocks.ravel(), series[-1])


def mean_pressure(heel: np.ndarray, toe: np.ndarray) -> np.ndarray:
    """Min-max normalize each trace over the trial, then average pointwise."""
    heel = np.asarray(heel, dtype=np.float64).ravel()
    toe = np.asarray(toe, dtype=np.float64).ravel()
    if heel.shape != toe.shape:
        raise ValidationError("pressure traces must have equal length")
    out = np.empty_like(heel)
    out[:] = 0.0
    for trace in (heel, toe):
        lo, hi = trace.min(), trace.max()
        if hi <= lo:
            raise ValidationError("flat pressure trace (max equals min)")
        out += (trace - lo) / (hi - lo)
    return out / 2.0


def binarize_contact(
    mean_pressure_signal: np.ndarray,
    threshold: float = CONTACT_THRESHOLD,
    min_duration_ms: float = DEBOUNCE_MS,
    fs: float = 1200.0,
) -> np.ndarray:
    """Threshold into a contact vector, merging runs shorter than the debounce.

    Sub-minimum runs are flipped into their neighbours shortest-first until
    every remaining run meets the minimum duration.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    contact = np.asarray(mean_pressure_signal, dtype=np.float64) >= threshold
    min_len = int(round(min_duration_ms * fs / 1000.0))
    if min_len <= 1 or contact.size == 0:
        return contact

    runs = _runs(contact)
    while len(runs) > 1:
        lengths = [end - start for start, end, _ in runs]
        shortest = int(np.argmin(lengths))
        if lengths[shortest] >= min_len:
            break
        start, end, value = runs.pop(shortest)
        contact[start:end] = not value
        # merge with identical neighbours
        merged_start, merged_end = start, end
        if shortest < len(runs) and runs[shortest][2] == (not value):
            merged_end = runs.pop(shortest)[1]
        if shortest > 0 and runs[shortest - 1][2] == (not value):
            merged_start = runs.pop(shortest - 1)[0]
            shortest -= 1
        runs.insert(shortest, (merged_start, merged_end, not value))
    return contact


def _runs(values: np.ndarray) -> list[tuple[int, int, bool]]:
    """Maximal constant runs as (start, end, value) with end exclusive."""
    edges = np.flatnonzero(np.diff(values.view(np.int8))) + 1
    bounds = np.concatenate([[0], edges, [values.size]])
    return [(int(a), int(b), bool(values[a])) for a, b in zip(bounds, bounds[1:])]


def detect_gait_events(contact: np.ndarray) -> GaitEventTrack:
    """Heel contact at every false-to-true edge, toe off at true-to-false.

    The event index is the first sample of the new state. All-constant input
    yields an empty track.
    """
    contact = np.asarray(contact, dtype=bool)
    events: list[tuple[GaitEventKind, int]] = []
    diff = np.flatnonzero(np.diff(contact.view(np.int8)))
    for idx in diff:
        kind = GaitEventKind.HC if contact[idx + 1] else GaitEventKind.TO
        events.append((kind, int(idx) + 1))
    return GaitEventTrack(tuple(events))


def derive_transition_points(
    annotation: ModeAnnotation,
    events: GaitEventTrack,
    max_distance: int = 1320,
) -> list[TransitionEvent]:
    """Anchor each tracked mode boundary to its critical gait event.

    For every adjacent segment pair forming a tracked transition, the
    transition point is the event of the required kind (heel contact or toe
    off) nearest the annotation boundary. Boundaries whose mode pair is not
    a tracked transition are skipped. ``max_distance`` is the search radius
    in samples, nominally one gait cycle.
    """
    out: list[TransitionEvent] = []
    for seg, seg_next in zip(annotation.segments, annotation.segments[1:]):
        kind = TransitionKind.from_modes(seg.mode, seg_next.mode)
        if kind is None:
            continue
        candidates = events.of_kind(kind.event)
        if candidates.size == 0:
            raise ValidationError(f"unanchored transition {kind}: no {kind.event} events")
        boundary = seg_next.start
        nearest = candidates[np.argmin(np.abs(candidates - boundary))]
        if abs(int(nearest) - boundary) > max_distance:
            raise ValidationError(
                f"unanchored transition {kind}: nearest {kind.event} is "
                f"{abs(int(nearest) - boundary)} samples from boundary {boundary}"
            )
        out.append(TransitionEvent(kind, int(nearest), kind.event))
    return out
