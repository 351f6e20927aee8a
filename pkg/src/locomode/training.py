"""Cross-validation splitting, the two-step training protocol, and full
experiment orchestration.

Step 1 trains the four-branch network on TrainSet1 with BCE loss, Adam,
LR-reduction on the training average loss, and early stopping on TrainSet2
loss (best weights restored). Step 2 freezes the network, replays TrainSet2
in stream order to collect five-step probability histories, and trains the
voting head for a fixed epoch budget with no scheduling.

Normalization statistics are always fitted on TrainSet1 only; test trials
are touched exclusively during evaluation.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .metrics import EvalReport, PredictionTrace, build_report
from .model import StfNet, VotingHead, build_histories, predict_windows
from .modes import CHANNEL_CONFIGS, MUSCLE_NAMES
from .nn import Adam, EarlyStopping, PlateauScheduler, bce_loss_grad, one_hot
from .preprocess import apply_normalization, condition_emg, default_emg_cascades, fit_channel_stats
from .recording import Trial, ValidationError
from .segmentation import WindowSet, WindowSpec, build_state_track, fft_magnitude, segment_trial

logger = logging.getLogger(__name__)

# Branch-level threading beats BLAS threading on this workload: the GEMMs are
# small and the elementwise passes dominate. Keep BLAS single-threaded while
# the model's own thread pool spreads branches across cores.
_BLAS_LIMITER = None


def _limit_blas_threads() -> None:
    global _BLAS_LIMITER
    if _BLAS_LIMITER is None:
        try:
            from threadpoolctl import threadpool_limits

            _BLAS_LIMITER = threadpool_limits(limits=1, user_api="blas")
        except Exception:  # pragma: no cover - threadpoolctl absent
            _BLAS_LIMITER = False


__all__ = [
    "FoldPlan",
    "TrainSettings",
    "TrainingDiverged",
    "make_folds",
    "train_step1",
    "train_step2",
    "evaluate_trials",
    "run_experiment",
    "channel_drop_run",
]


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during optimization."""


@dataclass(frozen=True)
class FoldPlan:
    """Trial-level split: one held-out fifth, remainder split 7:1."""

    fold_id: int
    train1: tuple[str, ...]
    train2: tuple[str, ...]
    test: tuple[str, ...]

    def __post_init__(self) -> None:
        sets = (set(self.train1), set(self.train2), set(self.test))
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValidationError(f"fold {self.fold_id}: overlapping partitions")


@dataclass(frozen=True)
class TrainSettings:
    """Hyperparameters and budget knobs for the two training steps."""

    lr: float = 0.001
    betas: tuple[float, float] = (0.9, 0.99)
    batch_size: int = 256
    max_epochs: int = 60
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    plateau_min_delta: float = 1e-4
    early_stop_patience: int = 10
    step2_epochs: int = 50
    step2_lr: float = 0.001
    train_subsample: int = 1   # keep every k-th window of TrainSet1/TrainSet2 loss data
    seed: int = 0
    notch_enabled: bool = True


def make_folds(trial_ids, seed: int, n_folds: int = 5) -> list[FoldPlan]:
    """Shuffle trials, cut five groups, and split each fold's remainder 7:1.

    Every trial lands in exactly one TestSet across the folds.
    """
    ids = list(trial_ids)
    if len(ids) < 2 * n_folds:
        raise ValidationError(f"need at least {2 * n_folds} trials, got {len(ids)}")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    groups = [list(g) for g in np.array_split(np.array(order, dtype=object), n_folds)]
    plans = []
    for fold_id in range(n_folds):
        rest = [tid for g_i, g in enumerate(groups) if g_i != fold_id for tid in g]
        n1 = round(len(rest) * 7 / 8)
        plans.append(FoldPlan(
            fold_id=fold_id,
            train1=tuple(rest[:n1]),
            train2=tuple(rest[n1:]),
            test=tuple(groups[fold_id]),
        ))
    return plans


class ConditionedTrials:
    """Lazily filters and rectifies trials, remembering the results.

    Reads the underlying trial mapping only on first touch of an id, which
    keeps test-set isolation auditable from the mapping's access log.
    """

    def __init__(self, trials: Mapping[str, Trial], notch_enabled: bool = True):
        self._trials = trials
        self._cascades = default_emg_cascades(notch_enabled=notch_enabled)
        self._cache: dict[str, np.ndarray] = {}

    def trial(self, trial_id: str) -> Trial:
        return self._trials[trial_id]

    def conditioned(self, trial_id: str) -> np.ndarray:
        if trial_id not in self._cache:
            self._cache[trial_id] = condition_emg(self._trials[trial_id].emg.samples, self._cascades)
        return self._cache[trial_id]


def _build_window_sets(
    source: ConditionedTrials,
    trial_ids,
    stats,
    spec: WindowSpec,
    channel_indices: tuple[int, ...] | None,
) -> list[WindowSet]:
    sets = []
    for tid in trial_ids:
        trial = source.trial(tid)
        normalized = apply_normalization(source.conditioned(tid), stats)
        track = build_state_track(trial.annotation, trial.transitions)
        sets.append(segment_trial(trial, normalized, spec, track, channel_indices))
    return sets


def _keep_mask(labels: np.ndarray, subsample: int, change_radius: int = 15) -> np.ndarray:
    """Subsampling mask: every k-th window plus everything near a label change.

    Transition timing lives entirely in the few windows around each label
    flip, so those are always kept; only the steady bulk is thinned.
    """
    keep = np.zeros(len(labels), dtype=bool)
    keep[::subsample] = True
    if subsample > 1 and len(labels) > 1:
        changes = np.flatnonzero(np.diff(labels.astype(np.int64)) != 0) + 1
        for c in changes:
            keep[max(0, c - change_radius):c + change_radius] = True
    return keep


class _Bank:
    """Kept windows of several trials, materialized once for fast epochs."""

    def __init__(self, sets: list[WindowSet], subsample: int = 1):
        slices = []
        labels = []
        for ws in sets:
            for wi in np.flatnonzero(_keep_mask(ws.labels, subsample)):
                slices.append(ws._slice(int(wi)))
                labels.append(ws.labels[wi])
        self.time = np.concatenate(slices, axis=0)[:, None, :, :] if slices else np.empty((0,))
        self.freq = fft_magnitude(self.time, axis=2)
        self.labels = np.array(labels, dtype=np.int64)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def batch(self, positions) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        positions = np.asarray(positions)
        return self.time[positions], self.freq[positions], self.labels[positions]


def _mean_eval_loss(model: StfNet, bank: _Bank, batch_size: int) -> float:
    total = 0.0
    count = 0
    for lo in range(0, len(bank), batch_size):
        pos = range(lo, min(lo + batch_size, len(bank)))
        tb, fb, yb = bank.batch(pos)
        probs = model.forward(tb, fb, train=False)
        loss, _ = bce_loss_grad(probs, one_hot(yb), want_grad=False)
        total += loss * len(yb)
        count += len(yb)
    return total / max(count, 1)


def train_step1(
    trials: Mapping[str, Trial],
    fold: FoldPlan,
    spec: WindowSpec,
    settings: TrainSettings,
    channel_indices: tuple[int, ...] | None = None,
):
    """Train the four-branch network on one fold.

    Returns (model, stats, history). Never touches ``fold.test``.
    """
    _limit_blas_threads()
    source = ConditionedTrials(trials, settings.notch_enabled)
    stats = fit_channel_stats(
        np.concatenate([source.conditioned(tid) for tid in fold.train1], axis=0)
    )
    train_sets = _build_window_sets(source, fold.train1, stats, spec, channel_indices)
    val_sets = _build_window_sets(source, fold.train2, stats, spec, channel_indices)
    train_bank = _Bank(train_sets, settings.train_subsample)
    val_bank = _Bank(val_sets, settings.train_subsample)

    n_channels = len(channel_indices) if channel_indices else len(MUSCLE_NAMES)
    model = StfNet(n_channels=n_channels, seed=settings.seed)
    opt = Adam(model.parameters(), lr=settings.lr, betas=settings.betas)
    plateau = PlateauScheduler(settings.lr, settings.plateau_factor,
                               settings.plateau_patience, settings.plateau_min_delta)
    stopper = EarlyStopping(settings.early_stop_patience)
    rng = np.random.default_rng(settings.seed)
    history: list[dict] = []
    best_state: dict[str, np.ndarray] | None = None

    for epoch in range(settings.max_epochs):
        perm = rng.permutation(len(train_bank))
        losses = []
        for lo in range(0, len(perm), settings.batch_size):
            pos = perm[lo:lo + settings.batch_size]
            if len(pos) < 2:
                continue  # batch norm needs at least two rows
            tb, fb, yb = train_bank.batch(pos)
            probs = model.forward(tb, fb, train=True)
            loss, dprobs = bce_loss_grad(probs, one_hot(yb))
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"fold {fold.fold_id} epoch {epoch}: loss {loss} at batch offset {lo}"
                )
            model.backward(dprobs)
            opt.step()
            opt.zero_grad()
            losses.append(loss)
        train_loss = float(np.mean(losses))
        opt.lr = plateau.step(train_loss)
        val_loss = _mean_eval_loss(model, val_bank, settings.batch_size)
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "val_loss": val_loss, "lr": opt.lr})
        logger.info("fold %d epoch %d: train %.4f val %.4f lr %.2e",
                    fold.fold_id, epoch, train_loss, val_loss, opt.lr)
        stop = stopper.step(val_loss)
        if stopper.best_epoch == epoch:
            best_state = {k: v.copy() for k, v in model.state_arrays().items()}
        if stop:
            break
    if best_state is not None:
        model.load_state_arrays(best_state)
    return model, stats, history


def train_step2(
    trials: Mapping[str, Trial],
    fold: FoldPlan,
    model: StfNet,
    stats,
    spec: WindowSpec,
    settings: TrainSettings,
    channel_indices: tuple[int, ...] | None = None,
) -> VotingHead:
    """Train the voting head on the frozen network's TrainSet2 streams.

    Fixed epoch budget; no plateau scheduling or early stopping.
    """
    _limit_blas_threads()
    source = ConditionedTrials(trials, settings.notch_enabled)
    val_sets = _build_window_sets(source, fold.train2, stats, spec, channel_indices)
    head = VotingHead(seed=settings.seed + 1)

    # histories are built over the dense stream, then thinned with the same
    # policy as step 1 so label flips keep their weight in the head's loss
    histories = []
    labels = []
    for ws in val_sets:
        raw, _, y = predict_windows(model, head, ws, batch_size=settings.batch_size)
        keep = _keep_mask(y, settings.train_subsample)
        histories.append(build_histories(raw, head)[keep])
        labels.append(y[keep])
    x = np.concatenate(histories, axis=0)
    y = one_hot(np.concatenate(labels))

    opt = Adam(head.parameters(), lr=settings.step2_lr, betas=settings.betas)
    rng = np.random.default_rng(settings.seed + 1)
    for _ in range(settings.step2_epochs):
        perm = rng.permutation(x.shape[0])
        for lo in range(0, len(perm), settings.batch_size):
            pos = perm[lo:lo + settings.batch_size]
            probs = head.forward(x[pos], train=True)
            loss, dprobs = bce_loss_grad(probs, y[pos])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"voting head diverged: loss {loss}")
            head.backward(dprobs)
            opt.step()
            opt.zero_grad()
    return head


def evaluate_trials(
    trials: Mapping[str, Trial],
    trial_ids,
    model: StfNet,
    head: VotingHead,
    stats,
    spec: WindowSpec,
    settings: TrainSettings,
    channel_indices: tuple[int, ...] | None = None,
) -> tuple[list[PredictionTrace], EvalReport]:
    """Dense-stride prediction over the given trials plus the metric report."""
    _limit_blas_threads()
    source = ConditionedTrials(trials, settings.notch_enabled)
    traces = []
    for ws in _build_window_sets(source, trial_ids, stats, spec, channel_indices):
        raw, voted, labels = predict_windows(model, head, ws, batch_size=settings.batch_size)
        traces.append(PredictionTrace(
            trial_id=ws.trial_id,
            window_ends=ws.ends,
            raw=raw.argmax(axis=1),
            voted=voted.argmax(axis=1),
            labels=labels,
            span_index=ws.span_index,
            transitions=ws.transitions,
        ))
    return traces, build_report(traces, spec.p_label_ms)


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def run_experiment(
    trials: Mapping[str, Trial],
    p_labels_ms,
    settings: TrainSettings,
    out_dir,
    window_len: int = 1200,
    stride: int = 60,
    folds=None,
    n_folds: int = 5,
    channel_config: str = "ALL",
    jobs: int = 1,
    resume: bool = True,
) -> dict:
    """Train and evaluate every (p_label, fold) cell; write checkpoints,
    reports, and a reproducible manifest. Partial failures are recorded per
    cell and the run continues."""
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "reports").mkdir(parents=True, exist_ok=True)

    plans = make_folds(sorted(trials.keys()), settings.seed, n_folds)
    fold_ids = list(folds) if folds is not None else [p.fold_id for p in plans]
    channel_indices = channel_indices_for(channel_config)

    config_payload = {
        "seed": settings.seed,
        "window_len": window_len,
        "stride": stride,
        "p_labels_ms": list(p_labels_ms),
        "folds": fold_ids,
        "channel_config": channel_config,
        "settings": asdict(settings),
    }
    manifest: dict = {
        "config": config_payload,
        "config_hash": _config_hash(config_payload),
        "decisions": {
            "filtering": "causal forward-only (real-time contract)",
            "normalization": "per-channel z-score fitted on TrainSet1 only",
            "pressure_normalization": "min-max per trace before averaging",
            "label_rule": "point lookup of the mode at window_end + p_label",
            "vote_padding": "zero probability vectors at stream start",
        },
        "fold_plans": [asdict(p) for p in plans],
        "cells": [],
    }

    def run_cell(p_label_ms: float, fold_id: int) -> dict:
        cell_name = f"fold{fold_id}_p{int(p_label_ms)}"
        spec = WindowSpec(window_len, stride, int(round(p_label_ms * 1.2)))
        plan = plans[fold_id]
        cell: dict = {"fold": fold_id, "p_label_ms": p_label_ms, "error": None}
        model_path = out / "checkpoints" / f"{cell_name}_model.bin"
        head_path = out / "checkpoints" / f"{cell_name}_vote.bin"
        report_path = out / "reports" / f"{cell_name}_report.json"
        sidecar_path = out / "checkpoints" / f"{cell_name}_train.json"
        try:
            done = all(p.exists() for p in (model_path, head_path, report_path, sidecar_path))
            if resume and done:
                logger.info("cell %s already trained, skipping", cell_name)
                history = json.loads(sidecar_path.read_text())["history"]
                report = EvalReport.load(report_path)
            else:
                model, stats, history = train_step1(trials, plan, spec, settings, channel_indices)
                head = train_step2(trials, plan, model, stats, spec, settings, channel_indices)
                model.save(model_path)
                head.save(head_path)
                sidecar_path.write_text(json.dumps({"history": history}, sort_keys=True))
                _, report = evaluate_trials(trials, plan.test, model, head, stats, spec,
                                            settings, channel_indices)
                report.config_hash = manifest["config_hash"]
                report.save(report_path)
            cell.update({
                "epochs_trained": len(history),
                "history": history,
                "checkpoint": str(model_path.relative_to(out)),
                "vote_checkpoint": str(head_path.relative_to(out)),
                "report": str(report_path.relative_to(out)),
                "metrics": {
                    "acc_ss": report.acc_ss,
                    "acc_ts": report.acc_ts,
                    "acc_overall": report.acc_overall,
                    "predict_rate": report.predict_rate,
                    "p_stable_mean_ms": report.p_stable_mean_ms,
                },
            })
        except Exception as exc:  # record and continue with other cells
            logger.exception("cell %s failed", cell_name)
            cell["error"] = f"{type(exc).__name__}: {exc}"
        return cell

    cells = [(p, f) for p in p_labels_ms for f in fold_ids]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda c: run_cell(*c), cells))
    else:
        results = [run_cell(*c) for c in cells]
    manifest["cells"] = results

    # aggregate mean +- sd across folds per p_label
    aggregates = {}
    for p in p_labels_ms:
        rows = [c["metrics"] for c in results
                if c["p_label_ms"] == p and c["error"] is None]
        if rows:
            aggregates[str(p)] = {
                key: {"mean": float(np.mean([r[key] for r in rows])),
                      "sd": float(np.std([r[key] for r in rows]))}
                for key in ("acc_ss", "acc_ts", "acc_overall", "predict_rate")
            }
    manifest["aggregates"] = aggregates

    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    _write_metrics_csv(out / "reports" / "metrics_grid.csv", results)
    return manifest


def _write_metrics_csv(path: Path, cells: list[dict]) -> None:
    lines = ["p_label_ms,fold,acc_ss,acc_ts,acc_overall,predict_rate,p_stable_mean_ms,error"]
    for c in sorted(cells, key=lambda c: (c["p_label_ms"], c["fold"])):
        if c["error"] is None:
            m = c["metrics"]
            p_stable = "" if m["p_stable_mean_ms"] is None else f"{m['p_stable_mean_ms']:.3f}"
            lines.append(
                f"{c['p_label_ms']},{c['fold']},{m['acc_ss']:.6f},{m['acc_ts']:.6f},"
                f"{m['acc_overall']:.6f},{m['predict_rate']:.6f},{p_stable},"
            )
        else:
            lines.append(f"{c['p_label_ms']},{c['fold']},,,,,,{c['error']!r}")
    path.write_text("\n".join(lines) + "\n")


def channel_indices_for(name: str) -> tuple[int, ...] | None:
    """Column indices for a named channel configuration; None means all 8."""
    if name == "ALL":
        return None
    try:
        muscles = CHANNEL_CONFIGS[name]
    except KeyError:
        raise ValidationError(
            f"unknown channel configuration {name!r}; valid: {sorted(CHANNEL_CONFIGS)}"
        ) from None
    return tuple(MUSCLE_NAMES.index(m) for m in muscles)


def channel_drop_run(
    trials: Mapping[str, Trial],
    settings: TrainSettings,
    p_label_ms: float = 250.0,
    configs=None,
    stride: int = 60,
    fold_id: int = 0,
) -> dict[str, EvalReport]:
    """Retrain from scratch per channel configuration and evaluate each.

    Uses one fold of the standard split; the spatial conv width shrinks to
    the retained channel count.
    """
    names = list(configs) if configs else list(CHANNEL_CONFIGS)
    spec = WindowSpec(1200, stride, int(round(p_label_ms * 1.2)))
    plan = make_folds(sorted(trials.keys()), settings.seed)[fold_id]
    reports: dict[str, EvalReport] = {}
    for name in names:
        indices = channel_indices_for(name)
        model, stats, _ = train_step1(trials, plan, spec, settings, indices)
        head = train_step2(trials, plan, model, stats, spec, settings, indices)
        _, report = evaluate_trials(trials, plan.test, model, head, stats, spec,
                                    settings, indices)
        reports[name] = report
        logger.info("channel config %s: overall %.3f", name, report.acc_overall)
    return reports
