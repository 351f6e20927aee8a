"""Evaluation metrics: stable-prediction detection, predict rate, steady and
transitional accuracy, and report assembly.

A transition is stably predicted once the classifier emits five consecutive
predictions of the upcoming mode, scanning window-by-window from the start
of the transitional span; t_d is the fifth window's end time and the stable
prediction time is t_c - t_d (positive means the switch was called before
the gait event). Transitional windows are scored against a reference that
holds the pre-transition mode before t_d and the post-transition mode from
t_d on; undetected transitions use t_d = t_c.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .modes import LocomotionMode, TransitionKind
from .recording import TransitionEvent

N_CLASSES = 9
SPAN_SAMPLES = 600      # transitional span before t_c
HORIZON_SAMPLES = 600   # detection search horizon after t_c
RUN_LENGTH = 5

__all__ = [
    "PredictionTrace",
    "StableDetection",
    "EvalReport",
    "detect_stable",
    "predict_rate",
    "steady_accuracy",
    "transition_accuracy",
    "build_report",
]


@dataclass(frozen=True)
class PredictionTrace:
    """Per-window predictions of one trial, in window order."""

    trial_id: str
    window_ends: np.ndarray   # (n,) sample indices, strictly increasing
    raw: np.ndarray           # (n,) argmax of the per-window probabilities
    voted: np.ndarray         # (n,) argmax after adaptive voting
    labels: np.ndarray        # (n,) ground-truth advance labels
    span_index: np.ndarray    # (n,) transitional span membership, -1 steady
    transitions: tuple[TransitionEvent, ...]

    def __post_init__(self) -> None:
        for name in ("window_ends", "raw", "voted", "labels", "span_index"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        if np.any(np.diff(self.window_ends) <= 0):
            raise ValueError("window_ends must be strictly increasing")
        object.__setattr__(self, "transitions", tuple(self.transitions))

    def __len__(self) -> int:
        return int(self.window_ends.shape[0])


@dataclass(frozen=True)
class StableDetection:
    """Time of the fifth consecutive correct prediction of the upcoming mode."""

    transition: TransitionEvent
    t_d: int

    @property
    def p_stable_ms(self) -> float:
        return (self.transition.transition_point - self.t_d) / 1.2


def detect_stable(
    trace: PredictionTrace,
    transition: TransitionEvent,
    span: int = SPAN_SAMPLES,
    horizon: int = HORIZON_SAMPLES,
    run_length: int = RUN_LENGTH,
) -> StableDetection | None:
    """First run of ``run_length`` consecutive upcoming-mode predictions.

    Scans voted predictions whose window end lies in
    [t_c - span, t_c + horizon]; returns None when no run completes inside
    the horizon. Raises if the trace has no windows over the search span.
    """
    t_c = transition.transition_point
    lo, hi = t_c - span, t_c + horizon
    mask = (trace.window_ends >= lo) & (trace.window_ends <= hi)
    if not np.any(mask):
        raise ValueError(
            f"trace {trace.trial_id} has a gap over [{lo}, {hi}] around {transition.kind}"
        )
    target = int(transition.kind.target)
    ends = trace.window_ends[mask]
    preds = trace.voted[mask]
    streak = 0
    for end, pred in zip(ends, preds):
        streak = streak + 1 if pred == target else 0
        if streak >= run_length:
            return StableDetection(transition, int(end))
    return None


def predict_rate(detections, n_transitions: int) -> float:
    """Fraction of transitions predicted before they occur (p_stable > 0)."""
    if n_transitions <= 0:
        raise ValueError("no transitions to rate")
    positive = sum(1 for d in detections if d is not None and d.p_stable_ms > 0)
    return positive / n_transitions


def steady_accuracy(traces) -> float:
    """Correct voted predictions over all steady-state windows."""
    correct = total = 0
    for trace in traces:
        steady = trace.span_index < 0
        correct += int((trace.voted[steady] == trace.labels[steady]).sum())
        total += int(steady.sum())
    if total == 0:
        raise ValueError("no steady-state windows")
    return correct / total


def _transition_reference(trace: PredictionTrace, k: int, t_d: int) -> tuple[np.ndarray, np.ndarray]:
    """Reference labels and prediction slice for transition k's windows."""
    kind = trace.transitions[k].kind
    mask = trace.span_index == k
    ends = trace.window_ends[mask]
    ref = np.where(ends < t_d, int(kind.source), int(kind.target))
    return ref, trace.voted[mask]


def transition_accuracy(traces, detections_per_trace) -> float:
    """Transitional windows matching the stable-prediction reference.

    ``detections_per_trace`` aligns with ``traces``; each entry holds one
    StableDetection-or-None per transition of that trace. Undetected
    transitions fall back to t_d = t_c.
    """
    matches = total = 0
    for trace, detections in zip(traces, detections_per_trace):
        for k, transition in enumerate(trace.transitions):
            det = detections[k]
            t_d = det.t_d if det is not None else transition.transition_point
            ref, pred = _transition_reference(trace, k, t_d)
            matches += int((pred == ref).sum())
            total += ref.size
    if total == 0:
        raise ValueError("no transitional windows")
    return matches / total


@dataclass
class EvalReport:
    """Aggregated evaluation over a set of prediction traces."""

    p_label_ms: float
    acc_ss: float
    acc_ts: float
    acc_overall: float
    predict_rate: float
    p_stable_mean_ms: float | None
    p_stable_sd_ms: float | None
    n_windows: int
    n_steady: int
    n_transitional: int
    n_transitions: int
    n_detected: int
    confusion: list[list[int]]
    per_kind: dict[str, dict] = field(default_factory=dict)
    p_stable_values: dict[str, list[float]] = field(default_factory=dict)
    config_hash: str | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(**data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))

    @classmethod
    def load(cls, path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_report(traces, p_label_ms: float) -> EvalReport:
    """Compute every metric plus the confusion matrix over the given traces."""
    traces = list(traces)
    detections_per_trace = [
        [detect_stable(trace, tr) for tr in trace.transitions] for trace in traces
    ]

    confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    n_windows = n_steady = steady_correct = 0
    for trace in traces:
        np.add.at(confusion, (trace.labels, trace.voted), 1)
        n_windows += len(trace)
        steady = trace.span_index < 0
        n_steady += int(steady.sum())
        steady_correct += int((trace.voted[steady] == trace.labels[steady]).sum())

    ts_matches = ts_total = 0
    per_kind: dict[str, dict] = {
        kind.name: {"count": 0, "detected": 0, "positive": 0, "p_stable_ms": []}
        for kind in TransitionKind
    }
    all_p_stable: list[float] = []
    n_transitions = n_detected = 0
    for trace, detections in zip(traces, detections_per_trace):
        for k, transition in enumerate(trace.transitions):
            det = detections[k]
            entry = per_kind[transition.kind.name]
            entry["count"] += 1
            n_transitions += 1
            if det is not None:
                entry["detected"] += 1
                n_detected += 1
                entry["p_stable_ms"].append(det.p_stable_ms)
                all_p_stable.append(det.p_stable_ms)
                if det.p_stable_ms > 0:
                    entry["positive"] += 1
            t_d = det.t_d if det is not None else transition.transition_point
            ref, pred = _transition_reference(trace, k, t_d)
            ts_matches += int((pred == ref).sum())
            ts_total += ref.size

    rate = predict_rate(
        [d for dets in detections_per_trace for d in dets], max(n_transitions, 1)
    ) if n_transitions else 0.0
    acc_ss = steady_correct / n_steady if n_steady else 0.0
    acc_ts = ts_matches / ts_total if ts_total else 0.0
    overall_correct = steady_correct + ts_matches
    acc_overall = overall_correct / (n_steady + ts_total) if (n_steady + ts_total) else 0.0

    p_stable_values = {
        name: entry.pop("p_stable_ms") for name, entry in per_kind.items()
    }
    for name, entry in per_kind.items():
        vals = p_stable_values[name]
        entry["p_stable_mean_ms"] = float(np.mean(vals)) if vals else None

    return EvalReport(
        p_label_ms=p_label_ms,
        acc_ss=acc_ss,
        acc_ts=acc_ts,
        acc_overall=acc_overall,
        predict_rate=rate,
        p_stable_mean_ms=float(np.mean(all_p_stable)) if all_p_stable else None,
        p_stable_sd_ms=float(np.std(all_p_stable)) if all_p_stable else None,
        n_windows=n_windows,
        n_steady=n_steady,
        n_transitional=ts_total,
        n_transitions=n_transitions,
        n_detected=n_detected,
        confusion=confusion.tolist(),
        per_kind=per_kind,
        p_stable_values=p_stable_values,
    )


def mode_name(code: int) -> str:
    return LocomotionMode(code).name
