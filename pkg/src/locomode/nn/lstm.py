"""LSTM recurrence with full backpropagation through time, and the
bidirectional stack used after the convolutional blocks."""

from __future__ import annotations

import numpy as np

from .layers import Layer, Parameter, ShapeError, _uniform

__all__ = ["LSTM", "BiLSTM", "BiLSTMStack"]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp underflow to 0 for very negative arguments is the correct limit
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


class LSTM(Layer):
    """Single-direction LSTM over (N, T, F) with zero initial state.

    Gate order in the packed weight matrices is input, forget, cell
    candidate, output; the forget-gate bias starts at 1.
    """

    def __init__(self, name: str, input_size: int, hidden_size: int,
                 rng: np.random.Generator, reverse: bool = False, dtype=np.float32):
        self.label = name
        self.input_size = input_size
        self.hidden = hidden_size
        self.reverse = reverse
        h = hidden_size
        self.w_x = Parameter(f"{name}.w_x", _uniform(rng, (input_size, 4 * h), input_size, dtype))
        self.w_h = Parameter(f"{name}.w_h", _uniform(rng, (h, 4 * h), h, dtype))
        bias = np.zeros(4 * h, dtype=dtype)
        bias[h:2 * h] = 1.0
        self.bias = Parameter(f"{name}.bias", bias)
        self._cache = None

    def parameters(self) -> list[Parameter]:
        return [self.w_x, self.w_h, self.bias]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise ShapeError(f"{self.label}: expected (N, T, {self.input_size}), got {x.shape}")
        xs = x[:, ::-1] if self.reverse else x
        n, t_steps, _ = xs.shape
        h_size = self.hidden
        xproj = xs.reshape(n * t_steps, -1) @ self.w_x.value
        xproj = xproj.reshape(n, t_steps, 4 * h_size) + self.bias.value

        h = np.zeros((n, h_size), dtype=x.dtype)
        c = np.zeros((n, h_size), dtype=x.dtype)
        steps = []
        out = np.empty((n, t_steps, h_size), dtype=x.dtype)
        for t in range(t_steps):
            z = xproj[:, t] + h @ self.w_h.value
            i = _sigmoid(z[:, :h_size])
            f = _sigmoid(z[:, h_size:2 * h_size])
            g = np.tanh(z[:, 2 * h_size:3 * h_size])
            o = _sigmoid(z[:, 3 * h_size:])
            c_prev, h_prev = c, h
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            out[:, t] = h
            steps.append((i, f, g, o, tc, c_prev, h_prev))
        self._cache = (xs, steps)
        return out[:, ::-1] if self.reverse else out

    def backward(self, gy: np.ndarray) -> np.ndarray:
        xs, steps = self._cache
        self._cache = None
        gys = gy[:, ::-1] if self.reverse else gy
        n, t_steps, h_size = gys.shape
        gz_all = np.empty((n, t_steps, 4 * h_size), dtype=gy.dtype)
        dh = np.zeros((n, h_size), dtype=gy.dtype)
        dc = np.zeros((n, h_size), dtype=gy.dtype)
        w_h = self.w_h.value
        for t in range(t_steps - 1, -1, -1):
            i, f, g, o, tc, c_prev, h_prev = steps[t]
            dh_total = gys[:, t] + dh
            do = dh_total * tc
            dc_total = dc + dh_total * o * (1.0 - tc * tc)
            di = dc_total * g
            df = dc_total * c_prev
            dg = dc_total * i
            dc = dc_total * f
            gz = gz_all[:, t]
            gz[:, :h_size] = di * i * (1.0 - i)
            gz[:, h_size:2 * h_size] = df * f * (1.0 - f)
            gz[:, 2 * h_size:3 * h_size] = dg * (1.0 - g * g)
            gz[:, 3 * h_size:] = do * o * (1.0 - o)
            dh = gz @ w_h.T
            self.w_h.grad += h_prev.T @ gz
        gz_flat = gz_all.reshape(n * t_steps, 4 * h_size)
        self.w_x.grad += xs.reshape(n * t_steps, -1).T @ gz_flat
        self.bias.grad += gz_flat.sum(axis=0)
        gx = (gz_flat @ self.w_x.value.T).reshape(n, t_steps, -1)
        return gx[:, ::-1] if self.reverse else gx


class BiLSTM(Layer):
    """Forward and time-reversed LSTM passes concatenated per step."""

    def __init__(self, name: str, input_size: int, hidden_size: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.label = name
        self.hidden = hidden_size
        self.fwd = LSTM(f"{name}.fwd", input_size, hidden_size, rng, reverse=False, dtype=dtype)
        self.bwd = LSTM(f"{name}.bwd", input_size, hidden_size, rng, reverse=True, dtype=dtype)

    def parameters(self) -> list[Parameter]:
        return self.fwd.parameters() + self.bwd.parameters()

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        return np.concatenate([self.fwd.forward(x, train), self.bwd.forward(x, train)], axis=2)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        h = self.hidden
        return self.fwd.backward(gy[:, :, :h]) + self.bwd.backward(gy[:, :, h:])


class BiLSTMStack(Layer):
    """Stacked bidirectional layers: (N, T, F) -> (N, T, 2 * hidden)."""

    def __init__(self, name: str, input_size: int, hidden_size: int, n_layers: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.label = name
        self.layers = []
        size = input_size
        for i in range(n_layers):
            self.layers.append(BiLSTM(f"{name}.{i}", size, hidden_size, rng, dtype=dtype))
            size = 2 * hidden_size

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, gy: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            gy = layer.backward(gy)
        return gy
