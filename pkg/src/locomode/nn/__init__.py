"""Minimal deterministic differentiable-operator library.

Exactly the layer set the four-branch network needs, with explicit
reverse-mode backward passes, Adam, plateau LR scheduling, early stopping,
and a finite-difference gradient checker.
"""

from .gradcheck import grad_check, max_rel_error
from .layers import (
    BatchNorm2d,
    Conv2d,
    LeakyReLU,
    Linear,
    MaxPoolH,
    Parameter,
    ShapeError,
    softmax,
    softmax_backward,
)
from .loss import bce_loss, bce_loss_grad, one_hot
from .lstm import BiLSTM, BiLSTMStack, LSTM
from .optim import Adam, EarlyStopping, PlateauScheduler

__all__ = [
    "Parameter",
    "ShapeError",
    "Conv2d",
    "BatchNorm2d",
    "LeakyReLU",
    "MaxPoolH",
    "Linear",
    "softmax",
    "softmax_backward",
    "bce_loss",
    "bce_loss_grad",
    "one_hot",
    "LSTM",
    "BiLSTM",
    "BiLSTMStack",
    "Adam",
    "PlateauScheduler",
    "EarlyStopping",
    "grad_check",
    "max_rel_error",
]
