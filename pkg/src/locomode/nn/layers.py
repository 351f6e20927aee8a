"""Dense layers with explicit forward/backward passes.

Every layer caches what its backward pass needs during forward and frees it
after backward. Arithmetic runs in the layer's dtype: float32 for training,
float64 when instantiated for gradient checking.
"""

from __future__ import annotations

import numpy as np

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
]


class ShapeError(ValueError):
    """Input shape does not match a layer's contract; names the stage."""


class Parameter:
    """Trainable array with gradient and Adam moment storage."""

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.ascontiguousarray(value)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.value.shape})"


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Common plumbing: parameter listing and stateful-buffer access."""

    label: str = ""

    def parameters(self) -> list[Parameter]:
        return []

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def _check(self, ok: bool, got, expected: str) -> None:
        if not ok:
            raise ShapeError(f"{self.label}: expected {expected}, got {got}")


class Conv2d(Layer):
    """Valid cross-correlation with stride 1 and per-output-channel bias.

    Kernels are (C_out, C_in, kh, kw); input is (N, C_in, H, W).
    """

    def __init__(self, name: str, c_in: int, c_out: int, kh: int, kw: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.label = name
        self.c_in, self.c_out, self.kh, self.kw = c_in, c_out, kh, kw
        fan_in = c_in * kh * kw
        self.weight = Parameter(f"{name}.weight", _uniform(rng, (c_out, c_in, kh, kw), fan_in, dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(c_out, dtype=dtype))
        self._x: np.ndarray | None = None

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._check(x.ndim == 4 and x.shape[1] == self.c_in, x.shape, f"(N, {self.c_in}, H, W)")
        n, _, h, w = x.shape
        self._check(h >= self.kh and w >= self.kw, x.shape, f"H >= {self.kh} and W >= {self.kw}")
        ho, wo = h - self.kh + 1, w - self.kw + 1
        k = self.weight.value
        out = np.zeros((n, ho, wo, self.c_out), dtype=x.dtype)
        for a in range(self.kh):
            for b in range(self.kw):
                out += np.tensordot(x[:, :, a:a + ho, b:b + wo], k[:, :, a, b], axes=([1], [1]))
        self._x = x
        return out.transpose(0, 3, 1, 2) + self.bias.value[None, :, None, None]

    def backward(self, gy: np.ndarray) -> np.ndarray:
        x = self._x
        assert x is not None, "backward before forward"
        n, _, h, w = x.shape
        ho, wo = h - self.kh + 1, w - self.kw + 1
        g = np.ascontiguousarray(gy.transpose(0, 2, 3, 1))  # (N, Ho, Wo, C_out)
        self.bias.grad += gy.sum(axis=(0, 2, 3))
        k = self.weight.value
        gx = np.zeros_like(x)
        for a in range(self.kh):
            for b in range(self.kw):
                xs = x[:, :, a:a + ho, b:b + wo]
                self.weight.grad[:, :, a, b] += np.tensordot(g, xs, axes=([0, 1, 2], [0, 2, 3]))
                gx[:, :, a:a + ho, b:b + wo] += np.tensordot(g, k[:, :, a, b], axes=([3], [0])).transpose(0, 3, 1, 2)
        self._x = None
        return gx


class BatchNorm2d(Layer):
    """Per-feature-channel batch normalization over (batch, spatial).

    Train mode uses batch statistics and updates the running estimates;
    eval mode is a fixed affine map from the running statistics.
    """

    def __init__(self, name: str, channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=np.float32):
        self.label = name
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(f"{name}.gamma", np.ones(channels, dtype=dtype))
        self.beta = Parameter(f"{name}.beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta]

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{self.label}.running_mean": self.running_mean,
                f"{self.label}.running_var": self.running_var}

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._check(x.ndim == 4 and x.shape[1] == self.channels, x.shape, f"(N, {self.channels}, H, W)")
        if train:
            if x.shape[0] < 2:
                raise ShapeError(f"{self.label}: batch size 1 in train mode")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean[...] = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var[...] = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        scale = (self.gamma.value * inv_std).astype(x.dtype)
        shift = (self.beta.value - mean * scale).astype(x.dtype)
        self._cache = (x, mean.astype(x.dtype), inv_std.astype(x.dtype), train)
        return x * scale[None, :, None, None] + shift[None, :, None, None]

    def backward(self, gy: np.ndarray) -> np.ndarray:
        x, mean, inv_std, train = self._cache
        self._cache = None
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        sum_gx = (gy * xhat).sum(axis=(0, 2, 3), keepdims=True)
        sum_g = gy.sum(axis=(0, 2, 3), keepdims=True)
        self.gamma.grad += sum_gx.reshape(-1)
        self.beta.grad += sum_g.reshape(-1)
        scale = (self.gamma.value * inv_std)[None, :, None, None]
        if not train:
            return gy * scale
        m = x.shape[0] * x.shape[2] * x.shape[3]
        # gamma is per-channel, so it factors out of the per-channel sums
        return (scale / m) * (m * gy - sum_g - xhat * sum_gx)


class LeakyReLU(Layer):
    """max(x, slope * x); the subgradient at zero takes the positive side.

    ``inplace`` lets the network mutate freshly produced activations instead
    of allocating; never enable it on arrays the caller still needs.
    """

    def __init__(self, name: str = "leaky_relu", slope: float = 0.01, inplace: bool = False):
        self.label = name
        self.slope = slope
        self.inplace = inplace
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._mask = x >= 0
        scaled = x * x.dtype.type(self.slope)
        return np.maximum(x, scaled, out=x if self.inplace else scaled)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        mask = self._mask
        self._mask = None
        return np.where(mask, gy, gy * gy.dtype.type(self.slope))


class MaxPoolH(Layer):
    """Max pooling along H with window = stride (4 for the network); ties
    route the gradient to the first maximal element."""

    def __init__(self, name: str = "maxpool", pool: int = 4):
        self.label = name
        self.pool = pool
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._check(x.ndim == 4 and x.shape[2] >= self.pool, x.shape, f"(N, C, H>={self.pool}, W)")
        n, c, h, w = x.shape
        ho = (h - self.pool) // self.pool + 1
        windows = np.ascontiguousarray(x[:, :, : ho * self.pool, :]).reshape(n, c, ho, self.pool, w)
        self._cache = (windows, x.shape, ho)
        return windows.max(axis=3)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        windows, shape, ho = self._cache
        self._cache = None
        n, c, h, w = shape
        arg = windows.argmax(axis=3)  # first index on ties
        gwin = np.zeros_like(windows, dtype=gy.dtype)
        np.put_along_axis(gwin, arg[:, :, :, None, :], gy[:, :, :, None, :], axis=3)
        gx = np.zeros(shape, dtype=gy.dtype)
        gx[:, :, : ho * self.pool, :] = gwin.reshape(n, c, ho * self.pool, w)
        return gx


class Linear(Layer):
    """Affine map: (N, n_in) @ (n_in, n_out) + bias."""

    def __init__(self, name: str, n_in: int, n_out: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.label = name
        self.n_in, self.n_out = n_in, n_out
        self.weight = Parameter(f"{name}.weight", _uniform(rng, (n_in, n_out), n_in, dtype))
        self.bias = Parameter(f"{name}.bias", np.zeros(n_out, dtype=dtype))
        self._x: np.ndarray | None = None

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._check(x.ndim == 2 and x.shape[1] == self.n_in, x.shape, f"(N, {self.n_in})")
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, gy: np.ndarray) -> np.ndarray:
        x = self._x
        self._x = None
        self.weight.grad += x.T @ gy
        self.bias.grad += gy.sum(axis=0)
        return gy @ self.weight.value.T


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise max-subtracted softmax."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Jacobian-vector product d(loss)/d(logits) given d(loss)/d(probs)."""
    dot = (gy * probs).sum(axis=-1, keepdims=True)
    return probs * (gy - dot)
