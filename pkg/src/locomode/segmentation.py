"""Sliding-window segmentation with advance-time labeling.

Windows of W samples advance by stride S; each window is labeled with the
ground-truth mode ``p_label`` samples after its end, so the classifier is
trained to predict ahead of time. A state track marks the 500 ms before each
transition point as transitional; a window is transitional when its label
lookup sample falls inside such a span.

The frequency-domain twin of each window is its per-channel DFT magnitude
with the full (Hermitian-symmetric) spectrum retained, so both network
inputs share one shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .recording import ModeAnnotation, Trial, TransitionEvent, ValidationError

TRANSITIONAL_SPAN = 600  # samples: 500 ms at 1200 Hz

__all__ = [
    "WindowSpec",
    "StateTrack",
    "LabeledWindow",
    "WindowSet",
    "build_state_track",
    "segment_trial",
    "fft_magnitude",
]


@dataclass(frozen=True)
class WindowSpec:
    """Window length, stride, and advance time, all in samples at 1200 Hz."""

    window_len: int = 1200
    stride: int = 60
    p_label: int = 300  # 250 ms

    def __post_init__(self) -> None:
        if self.window_len <= 0 or self.stride <= 0 or self.p_label < 0:
            raise ValidationError("window_len and stride must be positive, p_label nonnegative")

    @property
    def p_label_ms(self) -> float:
        return self.p_label / 1.2

    def key(self) -> str:
        return f"w{self.window_len}_s{self.stride}_p{self.p_label}"


@dataclass(frozen=True)
class StateTrack:
    """Per-sample ground truth: mode code plus transitional-span membership.

    ``span_index[t]`` is -1 for steady samples, otherwise the index into
    ``transitions`` of the span covering t. When spans overlap the later
    transition wins.
    """

    mode: np.ndarray        # (T,) int8
    span_index: np.ndarray  # (T,) int32
    transitions: tuple[TransitionEvent, ...]


def build_state_track(
    annotation: ModeAnnotation,
    transitions,
    span: int = TRANSITIONAL_SPAN,
) -> StateTrack:
    """Paint per-sample mode and transitional flags.

    Each transition flags the ``span`` samples before its transition point;
    spans are painted in event order so overlaps resolve to the later
    transition.
    """
    transitions = tuple(transitions)
    mode = annotation.mode_track()
    span_index = np.full(annotation.n_samples, -1, dtype=np.int32)
    for i, ev in enumerate(transitions):
        lo = max(0, ev.transition_point - span)
        span_index[lo:ev.transition_point] = i
    return StateTrack(mode, span_index, transitions)


@dataclass(frozen=True)
class LabeledWindow:
    """One training/evaluation example."""

    time_data: np.ndarray  # (1, W, C) float32
    freq_data: np.ndarray  # (1, W, C) float32, DFT magnitude
    label: int
    window_end: int        # index of the window's last sample
    transition_index: int  # -1 when steady
    trial_id: str


def fft_magnitude(time_data: np.ndarray, axis: int = -2) -> np.ndarray:
    """Per-channel DFT magnitude along the sample axis, full spectrum.

    Computed from the real-input transform and mirrored, so the symmetric
    halves are exactly equal; every consumer (single-window and batched)
    goes through this one function to keep inputs bit-identical.
    """
    time_data = np.asarray(time_data)
    if not np.all(np.isfinite(time_data)):
        raise ValidationError("fft: non-finite input")
    n = time_data.shape[axis]
    half = np.abs(np.fft.rfft(time_data, axis=axis))
    idx = np.concatenate([np.arange(half.shape[axis]), np.arange((n - 1) // 2, 0, -1)])
    return np.take(half, idx, axis=axis).astype(np.float32)


@dataclass
class WindowSet:
    """All windows of one trial, materialized lazily.

    Holds the conditioned signal once; window tensors (and their spectra)
    are sliced out on demand so large trials never exist unrolled in memory.
    """

    trial_id: str
    signal: np.ndarray       # (T, C) float32, normalized sEMG
    ends: np.ndarray         # (n,) int64 window end indices
    labels: np.ndarray       # (n,) int8
    span_index: np.ndarray   # (n,) int32, -1 steady
    spec: WindowSpec
    transitions: tuple[TransitionEvent, ...] = field(default_factory=tuple)
    channel_indices: tuple[int, ...] | None = None

    def __len__(self) -> int:
        return int(self.ends.shape[0])

    def _slice(self, i: int) -> np.ndarray:
        end = int(self.ends[i])
        window = self.signal[end - self.spec.window_len + 1 : end + 1]
        if self.channel_indices is not None:
            window = window[:, list(self.channel_indices)]
        return window[None, :, :]

    def window(self, i: int) -> LabeledWindow:
        time_data = np.ascontiguousarray(self._slice(i))
        return LabeledWindow(
            time_data=time_data,
            freq_data=fft_magnitude(time_data),
            label=int(self.labels[i]),
            window_end=int(self.ends[i]),
            transition_index=int(self.span_index[i]),
            trial_id=self.trial_id,
        )

    def batch(self, indices) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stacked (time, freq, labels) tensors for the given window indices."""
        time = np.concatenate([self._slice(int(i)) for i in indices], axis=0)
        time = time[:, None, :, :]  # (N, 1, W, C)
        freq = fft_magnitude(time, axis=2)
        return time, freq, self.labels[np.asarray(indices, dtype=np.int64)].astype(np.int64)


def segment_trial(
    trial: Trial,
    normalized: np.ndarray,
    spec: WindowSpec,
    track: StateTrack,
    channel_indices: tuple[int, ...] | None = None,
) -> WindowSet:
    """Slide windows over a conditioned trial and assign advance-time labels.

    Window ends are W-1, W-1+S, ...; a window is kept only while its label
    lookup sample (end + p_label) stays inside the trial, giving exactly
    floor((T - W - p_label)/S) + 1 windows.
    """
    t_total = int(normalized.shape[0])
    if t_total != trial.emg.n_samples:
        raise ValidationError("normalized signal length does not match trial")
    if t_total < spec.window_len + spec.p_label:
        raise ValidationError(
            f"trial too short: {t_total} < window {spec.window_len} + p_label {spec.p_label}"
        )
    n = (t_total - spec.window_len - spec.p_label) // spec.stride + 1
    ends = spec.window_len - 1 + spec.stride * np.arange(n, dtype=np.int64)
    lookup = ends + spec.p_label
    return WindowSet(
        trial_id=trial.trial_id,
        signal=np.asarray(normalized, dtype=np.float32),
        ends=ends,
        labels=track.mode[lookup].astype(np.int8),
        span_index=track.span_index[lookup].astype(np.int32),
        spec=spec,
        transitions=track.transitions,
        channel_indices=channel_indices,
    )
