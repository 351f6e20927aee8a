"""Versioned single-file binary container: a JSON metadata block plus named
little-endian float32 array payloads.

Layout:
    8 bytes   magic ``LOCMODE\\x01``
    u16       format version
    u32       metadata length, then UTF-8 JSON
    u32       array count
    per array: u16 name length, name UTF-8, u8 ndim, ndim * u32 dims,
               raw little-endian float32 payload (C order)

Round trips are bit-exact for float32 payloads; integers and text travel in
the metadata block.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, BinaryIO

import numpy as np

MAGIC = b"LOCMODE\x01"
VERSION = 1

__all__ = ["ContainerError", "write_container", "read_container"]


class ContainerError(Exception):
    """Malformed, truncated, or wrong-version container file."""


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ContainerError("unexpected end of file")
    return buf


def write_container(path: str | Path, metadata: dict[str, Any], arrays: dict[str, np.ndarray]) -> None:
    """Write metadata and named float32 arrays to ``path``."""
    meta_bytes = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", data.ndim))
            for dim in data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(data.tobytes(order="C"))


def read_container(path: str | Path) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    """Read a container file; returns (metadata, arrays)."""
    path = Path(path)
    if not path.exists():
        raise ContainerError(f"no such file: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ContainerError(f"bad magic in {path}")
        (version,) = struct.unpack("<H", _read_exact(fh, 2))
        if version != VERSION:
            raise ContainerError(f"unsupported container version {version} (expected {VERSION})")
        (meta_len,) = struct.unpack("<I", _read_exact(fh, 4))
        try:
            metadata = json.loads(_read_exact(fh, meta_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ContainerError(f"corrupt metadata block: {exc}") from exc
        (n_arrays,) = struct.unpack("<I", _read_exact(fh, 4))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(n_arrays):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
            shape = tuple(struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(ndim))
            count = int(np.prod(shape)) if shape else 1
            payload = _read_exact(fh, count * 4)
            arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        return metadata, arrays
