"""Adam, training-loss plateau LR scheduling, and early stopping."""

from __future__ import annotations

import numpy as np

from .layers import Parameter

__all__ = ["Adam", "PlateauScheduler", "EarlyStopping"]


class Adam:
    """Bias-corrected adaptive moment estimation over a parameter list."""

    def __init__(self, params: list[Parameter], lr: float = 0.001,
                 betas: tuple[float, float] = (0.9, 0.99), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            g = p.grad
            p.adam_m[...] = self.beta1 * p.adam_m + (1.0 - self.beta1) * g
            p.adam_v[...] = self.beta2 * p.adam_v + (1.0 - self.beta2) * (g * g)
            m_hat = p.adam_m / bc1
            v_hat = p.adam_v / bc2
            p.value[...] = p.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class PlateauScheduler:
    """Multiply the LR by ``factor`` when the tracked loss stops improving.

    Improvement means dropping below the best seen minus ``min_delta``;
    after ``patience`` consecutive non-improving epochs the LR is reduced
    (never below ``min_lr``) and the stall counter resets.
    """

    def __init__(self, lr: float, factor: float = 0.5, patience: int = 5,
                 min_delta: float = 1e-4, min_lr: float = 1e-6):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_delta = min_delta
        self.min_lr = min_lr
        self.best = np.inf
        self.stall = 0

    def step(self, loss: float) -> float:
        """Record one epoch's loss; returns the LR to use next."""
        if loss < self.best - self.min_delta:
            self.best = loss
            self.stall = 0
        else:
            self.stall += 1
            if self.stall >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.stall = 0
        return self.lr


class EarlyStopping:
    """Stop when the validation loss fails to improve for ``patience`` epochs.

    ``step`` returns True when training should stop; ``best_epoch`` points at
    the epoch whose weights the harness should restore.
    """

    def __init__(self, patience: int = 10, min_delta: float = 0.0):
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.best_epoch = -1
        self.stall = 0
        self.epoch = -1

    def step(self, loss: float) -> bool:
        self.epoch += 1
        if loss < self.best - self.min_delta:
            self.best = loss
            self.best_epoch = self.epoch
            self.stall = 0
            return False
        self.stall += 1
        return self.stall >= self.patience
