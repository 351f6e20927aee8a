"""The four-branch spatial/temporal/frequency network and its adaptive
voting head.

Branch 1 runs spatial then temporal convolution blocks on the time-domain
window, branch 2 the temporal block alone; branches 3 and 4 mirror them on
the window's DFT magnitude. Each branch feeds a three-layer bidirectional
LSTM, flattens to 2048 features and projects to 64; the four 64-vectors
concatenate into a 256-feature head that emits 9 class probabilities.

The branches share architecture but never weights. The voting head maps the
last five prediction probability vectors (zero-padded at stream start) to a
refreshed distribution.
"""

from __future__ import annotations

import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterator

import numpy as np

from .container import ContainerError, read_container, write_container
from .nn import (
    Adam,
    BatchNorm2d,
    BiLSTMStack,
    Conv2d,
    LeakyReLU,
    Linear,
    Parameter,
    ShapeError,
    softmax,
    softmax_backward,
)
from .segmentation import WindowSet

N_CLASSES = 9
WINDOW_LEN = 1200
VOTE_STEPS = 5
CONV_HEIGHTS = (1200, 1198, 299, 297, 74, 72, 18, 16)  # through the conv/pool chain

Trace = Callable[[str, tuple], None] | None

__all__ = ["StfNet", "VotingHead", "predict_stream", "predict_windows", "expected_shape_rows"]


def _trace(trace: Trace, name: str, x: np.ndarray) -> None:
    if trace is not None:
        trace(name, tuple(x.shape[1:]))


class SpatialBlock:
    """Convolution across the electrode axis, shape-preserving via permute."""

    def __init__(self, name: str, n_channels: int, rng: np.random.Generator, dtype=np.float32):
        self.name = name
        self.n_channels = n_channels
        self.conv = Conv2d(f"{name}.conv", 1, n_channels, 1, n_channels, rng, dtype=dtype)
        self.bn = BatchNorm2d(f"{name}.bn", 1, dtype=dtype)
        self.act = LeakyReLU(f"{name}.act", inplace=True)

    def parameters(self) -> list[Parameter]:
        return self.conv.parameters() + self.bn.parameters()

    def buffers(self) -> dict[str, np.ndarray]:
        return self.bn.buffers()

    def forward(self, x: np.ndarray, train: bool, trace: Trace = None) -> np.ndarray:
        x = self.conv.forward(x, train)
        _trace(trace, f"{self.name}.conv 1x{self.n_channels},{self.n_channels}", x)
        x = x.transpose(0, 3, 2, 1)  # feature maps become the electrode axis
        _trace(trace, f"{self.name}.permute", x)
        x = self.bn.forward(x, train)
        _trace(trace, f"{self.name}.batchnorm", x)
        x = self.act.forward(x, train)
        _trace(trace, f"{self.name}.leaky_relu", x)
        return x

    def backward(self, gy: np.ndarray) -> np.ndarray:
        gy = self.act.backward(gy)
        gy = self.bn.backward(gy)
        gy = gy.transpose(0, 3, 2, 1)
        return self.conv.backward(gy)


class ConvBlock:
    """The shared temporal/frequency CNN block: four 3x1 convolutions with
    batch norm and leaky relu, pooled down to 16 time steps."""

    _CHANNELS = ((1, 8), (8, 16), (16, 16), (16, 16))

    def __init__(self, name: str, rng: np.random.Generator, dtype=np.float32):
        self.name = name
        self.convs = []
        self.bns = []
        self.acts = []
        from .nn import MaxPoolH

        self.pools = []
        for i, (c_in, c_out) in enumerate(self._CHANNELS):
            self.convs.append(Conv2d(f"{name}.conv{i}", c_in, c_out, 3, 1, rng, dtype=dtype))
            self.bns.append(BatchNorm2d(f"{name}.bn{i}", c_out, dtype=dtype))
            self.acts.append(LeakyReLU(f"{name}.act{i}", inplace=True))
            if i < 3:
                self.pools.append(MaxPoolH(f"{name}.pool{i}", 4))

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for conv, bn in zip(self.convs, self.bns):
            out += conv.parameters() + bn.parameters()
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for bn in self.bns:
            out.update(bn.buffers())
        return out

    def forward(self, x: np.ndarray, train: bool, trace: Trace = None) -> np.ndarray:
        for i in range(4):
            x = self.convs[i].forward(x, train)
            _trace(trace, f"{self.name}.conv{i} 3x1,{self._CHANNELS[i][1]}", x)
            x = self.bns[i].forward(x, train)
            _trace(trace, f"{self.name}.batchnorm{i}", x)
            x = self.acts[i].forward(x, train)
            _trace(trace, f"{self.name}.leaky_relu{i}", x)
            if i < 3:
                x = self.pools[i].forward(x, train)
                _trace(trace, f"{self.name}.maxpool{i} 4x1s4", x)
        return x

    def backward(self, gy: np.ndarray) -> np.ndarray:
        for i in range(3, -1, -1):
            if i < 3:
                gy = self.pools[i].backward(gy)
            gy = self.acts[i].backward(gy)
            gy = self.bns[i].backward(gy)
            gy = self.convs[i].backward(gy)
        return gy


class Branch:
    """One feature-extraction branch: optional spatial block, conv block,
    BiLSTM stack, and the 2048 -> 64 projection."""

    def __init__(self, name: str, n_channels: int, with_spatial: bool,
                 rng: np.random.Generator, hidden: int = 64, lstm_layers: int = 3,
                 dtype=np.float32):
        self.name = name
        self.n_channels = n_channels
        self.spatial = SpatialBlock(f"{name}.spatial", n_channels, rng, dtype) if with_spatial else None
        self.block = ConvBlock(f"{name}.block", rng, dtype)
        self.seq_steps = CONV_HEIGHTS[-1]
        self.seq_features = 16 * n_channels
        self.bilstm = BiLSTMStack(f"{name}.bilstm", self.seq_features, hidden, lstm_layers, rng, dtype)
        self.lstm_features = 2 * hidden
        self.fc = Linear(f"{name}.fc", self.seq_steps * self.lstm_features, 64, rng, dtype)
        self.act = LeakyReLU(f"{name}.fc_act", inplace=True)
        self._shape = None

    def parameters(self) -> list[Parameter]:
        out = self.spatial.parameters() if self.spatial else []
        return out + self.block.parameters() + self.bilstm.parameters() + self.fc.parameters()

    def buffers(self) -> dict[str, np.ndarray]:
        out = dict(self.spatial.buffers()) if self.spatial else {}
        out.update(self.block.buffers())
        return out

    def forward(self, x: np.ndarray, train: bool, trace: Trace = None) -> np.ndarray:
        if x.ndim != 4 or x.shape[1:] != (1, WINDOW_LEN, self.n_channels):
            raise ShapeError(
                f"{self.name}: expected input (N, 1, {WINDOW_LEN}, {self.n_channels}), got {x.shape}"
            )
        if self.spatial is not None:
            x = self.spatial.forward(x, train, trace)
        x = self.block.forward(x, train, trace)
        n = x.shape[0]
        self._shape = x.shape
        x = x.transpose(0, 2, 1, 3).reshape(n, self.seq_steps, self.seq_features)
        _trace(trace, f"{self.name}.to_sequence", x)
        x = self.bilstm.forward(x, train)
        _trace(trace, f"{self.name}.bilstm x3", x)
        x = x.reshape(n, -1)
        _trace(trace, f"{self.name}.flatten", x)
        x = self.fc.forward(x, train)
        _trace(trace, f"{self.name}.fc 2048,64", x)
        x = self.act.forward(x, train)
        _trace(trace, f"{self.name}.fc_leaky_relu", x)
        return x

    def backward(self, gy: np.ndarray) -> np.ndarray:
        n = gy.shape[0]
        gy = self.act.backward(gy)
        gy = self.fc.backward(gy)
        gy = gy.reshape(n, self.seq_steps, self.lstm_features)
        gy = self.bilstm.backward(gy)
        c, h, w = self._shape[1:]
        gy = gy.reshape(n, h, c, w).transpose(0, 2, 1, 3)
        gy = self.block.backward(gy)
        if self.spatial is not None:
            gy = self.spatial.backward(gy)
        return gy


class StfNet:
    """Four-branch network emitting 9-class probabilities per window."""

    BRANCH_SPECS = (
        ("spatial_temporal", True, "time"),
        ("temporal", False, "time"),
        ("spatial_frequency", True, "freq"),
        ("frequency", False, "freq"),
    )

    def __init__(self, n_channels: int = 8, hidden: int = 64, lstm_layers: int = 3,
                 seed: int = 0, dtype=np.float32, threads: int | None = None):
        self.arch = {
            "model": "stf_net",
            "n_channels": n_channels,
            "hidden": hidden,
            "lstm_layers": lstm_layers,
            "n_classes": N_CLASSES,
            "window_len": WINDOW_LEN,
            "init_seed": seed,
        }
        rng = np.random.default_rng(seed)
        self.branches = [
            Branch(name, n_channels, with_spatial, rng, hidden, lstm_layers, dtype)
            for name, with_spatial, _ in self.BRANCH_SPECS
        ]
        self.head = Linear("head.fc", 4 * 64, N_CLASSES, rng, dtype)
        self._probs: np.ndarray | None = None
        # branches are independent; spreading them over threads speeds up the
        # elementwise-bound passes without changing any result bit
        if threads is None:
            threads = min(4, os.cpu_count() or 1)
        self._pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    @property
    def n_channels(self) -> int:
        return self.arch["n_channels"]

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for branch in self.branches:
            out += branch.parameters()
        return out + self.head.parameters()

    def buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for branch in self.branches:
            out.update(branch.buffers())
        return out

    def forward(self, time_data: np.ndarray, freq_data: np.ndarray, train: bool = False,
                trace: Trace = None) -> np.ndarray:
        _trace(trace, "input", time_data)
        inputs = {"time": time_data, "freq": freq_data}
        jobs = [
            (branch, inputs[source])
            for branch, (_, _, source) in zip(self.branches, self.BRANCH_SPECS)
        ]
        if self._pool is not None and trace is None:
            futures = [self._pool.submit(branch.forward, x, train) for branch, x in jobs]
            feats = [f.result() for f in futures]
        else:
            feats = [branch.forward(x, train, trace) for branch, x in jobs]
        cat = np.concatenate(feats, axis=1)
        _trace(trace, "concatenation", cat)
        logits = self.head.forward(cat, train)
        _trace(trace, "head.fc 256,9", logits)
        probs = softmax(logits)
        _trace(trace, "head.softmax", probs)
        self._probs = probs
        return probs

    def backward(self, gprobs: np.ndarray) -> None:
        glogits = softmax_backward(self._probs, gprobs)
        gcat = self.head.backward(glogits)
        slices = [gcat[:, 64 * i:64 * (i + 1)] for i in range(len(self.branches))]
        if self._pool is not None:
            futures = [self._pool.submit(branch.backward, g)
                       for branch, g in zip(self.branches, slices)]
            for f in futures:
                f.result()
        else:
            for branch, g in zip(self.branches, slices):
                branch.backward(g)

    # --- persistence ---------------------------------------------------

    def state_arrays(self, include_moments: bool = True) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for p in self.parameters():
            out[p.name] = p.value
            if include_moments:
                out[f"{p.name}.adam_m"] = p.adam_m
                out[f"{p.name}.adam_v"] = p.adam_v
        out.update(self.buffers())
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            p.value[...] = arrays[p.name]
            if f"{p.name}.adam_m" in arrays:
                p.adam_m[...] = arrays[f"{p.name}.adam_m"]
                p.adam_v[...] = arrays[f"{p.name}.adam_v"]
        for name, buf in self.buffers().items():
            buf[...] = arrays[name]

    def save(self, path) -> None:
        write_container(path, {"kind": "model_checkpoint", "arch": self.arch},
                        self.state_arrays())

    @classmethod
    def load(cls, path) -> "StfNet":
        metadata, arrays = read_container(path)
        if metadata.get("kind") != "model_checkpoint":
            raise ContainerError(f"{path} is not a model checkpoint")
        arch = metadata["arch"]
        if arch.get("model") != "stf_net":
            raise ContainerError(f"unknown model type {arch.get('model')!r}")
        model = cls(
            n_channels=arch["n_channels"],
            hidden=arch["hidden"],
            lstm_layers=arch["lstm_layers"],
            seed=arch["init_seed"],
        )
        missing = [p.name for p in model.parameters() if p.name not in arrays]
        if missing:
            raise ContainerError(f"checkpoint missing parameters: {missing[:3]}...")
        model.load_state_arrays(arrays)
        return model


class VotingHead:
    """Learned aggregation of the last five step probability vectors."""

    def __init__(self, seed: int = 0, n_classes: int = N_CLASSES, steps: int = VOTE_STEPS,
                 pad_one_hot_st: bool = False, dtype=np.float32):
        self.n_classes = n_classes
        self.steps = steps
        self.pad_one_hot_st = pad_one_hot_st
        rng = np.random.default_rng(seed)
        self.fc = Linear("vote.fc", steps * n_classes, n_classes, rng, dtype)
        self._probs: np.ndarray | None = None

    def parameters(self) -> list[Parameter]:
        return self.fc.parameters()

    def pad_vector(self) -> np.ndarray:
        pad = np.zeros(self.n_classes, dtype=np.float32)
        if self.pad_one_hot_st:
            pad[0] = 1.0
        return pad

    def vote(self, history) -> np.ndarray:
        """Aggregate exactly ``steps`` probability vectors into one."""
        history = list(history)
        if len(history) != self.steps:
            raise ValueError(f"vote needs exactly {self.steps} vectors, got {len(history)}")
        flat = np.concatenate([np.asarray(h, dtype=np.float32).ravel() for h in history])
        if flat.shape[0] != self.steps * self.n_classes:
            raise ValueError(f"history vectors must each have {self.n_classes} entries")
        return self.forward(flat[None, :])[0]

    def forward(self, histories: np.ndarray, train: bool = False) -> np.ndarray:
        logits = self.fc.forward(histories, train)
        probs = softmax(logits)
        self._probs = probs
        return probs

    def backward(self, gprobs: np.ndarray) -> np.ndarray:
        glogits = softmax_backward(self._probs, gprobs)
        return self.fc.backward(glogits)

    def save(self, path) -> None:
        arrays = {}
        for p in self.parameters():
            arrays[p.name] = p.value
            arrays[f"{p.name}.adam_m"] = p.adam_m
            arrays[f"{p.name}.adam_v"] = p.adam_v
        write_container(path, {"kind": "vote_checkpoint",
                               "arch": {"n_classes": self.n_classes, "steps": self.steps,
                                        "pad_one_hot_st": self.pad_one_hot_st}}, arrays)

    @classmethod
    def load(cls, path) -> "VotingHead":
        metadata, arrays = read_container(path)
        if metadata.get("kind") != "vote_checkpoint":
            raise ContainerError(f"{path} is not a voting checkpoint")
        arch = metadata["arch"]
        head = cls(n_classes=arch["n_classes"], steps=arch["steps"],
                   pad_one_hot_st=arch["pad_one_hot_st"])
        for p in head.parameters():
            p.value[...] = arrays[p.name]
            p.adam_m[...] = arrays[f"{p.name}.adam_m"]
            p.adam_v[...] = arrays[f"{p.name}.adam_v"]
        return head


def build_histories(raw_probs: np.ndarray, head: VotingHead) -> np.ndarray:
    """Stack each window's last five raw probability vectors (with stream-start
    padding) into (N, 45) voting inputs."""
    n, k = raw_probs.shape
    pad = head.pad_vector()[None, :]
    padded = np.concatenate([np.repeat(pad, head.steps - 1, axis=0), raw_probs], axis=0)
    return np.concatenate([padded[i:i + n] for i in range(head.steps)], axis=1)


def predict_windows(
    model: StfNet,
    head: VotingHead,
    windows: WindowSet,
    batch_size: int = 256,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Offline evaluation over a trial's ordered windows.

    Returns (raw_probs (N, 9), voted_probs (N, 9), labels (N,)).
    """
    ends = windows.ends
    if np.any(np.diff(ends) <= 0):
        raise ValueError("windows must be ordered by window_end")
    chunks = []
    for lo in range(0, len(windows), batch_size):
        idx = np.arange(lo, min(lo + batch_size, len(windows)))
        time, freq, _ = windows.batch(idx)
        chunks.append(model.forward(time, freq, train=False))
    raw = np.concatenate(chunks, axis=0)
    voted = head.forward(build_histories(raw, head))
    return raw, voted, windows.labels.astype(np.int64)


def predict_stream(
    model: StfNet,
    head: VotingHead,
    window_iter: Iterator,
) -> Iterator[tuple[int, int, np.ndarray]]:
    """True streaming prediction over LabeledWindow objects in trial order.

    Maintains the five-deep probability buffer and yields
    (raw_class, voted_class, voted_probs) per window. Equivalent to
    :func:`predict_windows` over the same trial.
    """
    buffer: deque[np.ndarray] = deque(
        [head.pad_vector() for _ in range(head.steps - 1)], maxlen=head.steps
    )
    last_end = None
    for window in window_iter:
        if last_end is not None and window.window_end <= last_end:
            raise ValueError("unordered window stream")
        last_end = window.window_end
        raw = model.forward(window.time_data[:, None, :, :], window.freq_data[:, None, :, :])[0]
        buffer.append(raw)
        voted = head.vote(list(buffer))
        yield int(raw.argmax()), int(voted.argmax()), voted


def shape_trace(model: StfNet, head: VotingHead) -> list[tuple[str, tuple]]:
    """Run a traced forward and record every stage's output shape
    (batch axis stripped), including the voting stages."""
    rows: list[tuple[str, tuple]] = []
    time = np.zeros((2, 1, WINDOW_LEN, model.n_channels), dtype=np.float32)
    probs = model.forward(time, time, train=False, trace=lambda n, s: rows.append((n, s)))
    history = np.stack([probs[0]] * head.steps)
    rows.append(("vote.concatenation", tuple(history.shape)))
    flat = history.reshape(1, -1)
    rows.append(("vote.flatten", tuple(flat.shape[1:])))
    logits = head.fc.forward(flat)
    rows.append(("vote.fc 45,9", tuple(logits.shape[1:])))
    rows.append(("vote.softmax", tuple(softmax(logits).shape[1:])))
    return rows


def expected_shape_rows(n_channels: int = 8) -> list[tuple[str, tuple]]:
    """The architecture's stage-by-stage output shapes for a traced forward."""
    rows: list[tuple[str, tuple]] = [("input", (1, WINDOW_LEN, n_channels))]
    for name, with_spatial, _ in StfNet.BRANCH_SPECS:
        if with_spatial:
            rows += [
                (f"{name}.spatial.conv 1x{n_channels},{n_channels}", (n_channels, WINDOW_LEN, 1)),
                (f"{name}.spatial.permute", (1, WINDOW_LEN, n_channels)),
                (f"{name}.spatial.batchnorm", (1, WINDOW_LEN, n_channels)),
                (f"{name}.spatial.leaky_relu", (1, WINDOW_LEN, n_channels)),
            ]
        channels = (8, 16, 16, 16)
        for i in range(4):
            h_conv = CONV_HEIGHTS[2 * i + 1]
            rows += [
                (f"{name}.block.conv{i} 3x1,{channels[i]}", (channels[i], h_conv, n_channels)),
                (f"{name}.block.batchnorm{i}", (channels[i], h_conv, n_channels)),
                (f"{name}.block.leaky_relu{i}", (channels[i], h_conv, n_channels)),
            ]
            if i < 3:
                rows.append((f"{name}.block.maxpool{i} 4x1s4",
                             (channels[i], CONV_HEIGHTS[2 * i + 2], n_channels)))
        rows += [
            (f"{name}.to_sequence", (16, 16 * n_channels)),
            (f"{name}.bilstm x3", (16, 128)),
            (f"{name}.flatten", (2048,)),
            (f"{name}.fc 2048,64", (64,)),
            (f"{name}.fc_leaky_relu", (64,)),
        ]
    rows += [
        ("concatenation", (256,)),
        ("head.fc 256,9", (N_CLASSES,)),
        ("head.softmax", (N_CLASSES,)),
        ("vote.concatenation", (VOTE_STEPS, N_CLASSES)),
        ("vote.flatten", (VOTE_STEPS * N_CLASSES,)),
        ("vote.fc 45,9", (N_CLASSES,)),
        ("vote.softmax", (N_CLASSES,)),
    ]
    return rows
