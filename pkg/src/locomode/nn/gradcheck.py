"""Central finite-difference verification of analytic gradients.

Checks run layers instantiated at float64; the reported figure is the worst
relative error over every coordinate of every checked array.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = ["max_rel_error", "grad_check"]


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst |a - n| / max(|a| + |n|, 1e-6) over all coordinates."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(np.abs(a) + np.abs(n), 1e-6)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def grad_check(
    loss_fn: Callable[[], float],
    arrays: Sequence[np.ndarray],
    analytic_grads: Sequence[np.ndarray],
    h: float = 1e-5,
) -> float:
    """Compare analytic gradients against central differences.

    ``loss_fn`` re-evaluates the scalar objective using ``arrays`` in place
    (perturbations are written into them and reverted). Returns the max
    relative error over every coordinate of every array.
    """
    worst = 0.0
    for arr, grad in zip(arrays, analytic_grads):
        if arr.dtype != np.float64:
            raise TypeError(f"grad_check requires float64 arrays, got {arr.dtype}")
        flat = arr.ravel()
        gflat = np.asarray(grad, dtype=np.float64).ravel()
        numeric = np.empty_like(gflat)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            lp = loss_fn()
            flat[idx] = orig - h
            lm = loss_fn()
            flat[idx] = orig
            numeric[idx] = (lp - lm) / (2.0 * h)
        worst = max(worst, max_rel_error(gflat, numeric))
    return worst
