"""Binary cross entropy over class probability vectors."""

from __future__ import annotations

import numpy as np

CLAMP = 1e-7

__all__ = ["one_hot", "bce_loss", "bce_loss_grad"]


def one_hot(labels: np.ndarray, n_classes: int = 9, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], n_classes), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def bce_loss(pred: np.ndarray, target: np.ndarray, mean_over: str = "all") -> float:
    """Mean binary cross entropy between probabilities and one-hot targets.

    ``mean_over='all'`` averages over every prediction term (batch x classes),
    ``'batch'`` over rows only. Predictions are clamped to
    [1e-7, 1 - 1e-7] before the logs.
    """
    loss, _ = bce_loss_grad(pred, target, mean_over, want_grad=False)
    return loss


def bce_loss_grad(
    pred: np.ndarray,
    target: np.ndarray,
    mean_over: str = "all",
    want_grad: bool = True,
) -> tuple[float, np.ndarray | None]:
    """Loss plus its gradient with respect to the (unclamped) predictions."""
    if pred.shape != target.shape:
        raise ValueError(f"pred {pred.shape} vs target {target.shape}")
    if mean_over not in ("all", "batch"):
        raise ValueError("mean_over must be 'all' or 'batch'")
    denom = pred.size if mean_over == "all" else pred.shape[0]
    clamped = np.clip(pred, CLAMP, 1.0 - CLAMP)
    loss = -(target * np.log(clamped) + (1.0 - target) * np.log1p(-clamped)).sum() / denom
    if not want_grad:
        return float(loss), None
    grad = -(target / clamped - (1.0 - target) / (1.0 - clamped)) / denom
    # where the clamp is active the loss is locally flat in pred
    grad = np.where((pred >= CLAMP) & (pred <= 1.0 - CLAMP), grad, 0.0).astype(pred.dtype)
    return float(loss), grad
