"""Binary weight files: magic, version, JSON descriptor, float32 little-endian weights."""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def write_checkpoint(path: str | Path, magic: bytes, descriptor: dict, weights: Sequence[np.ndarray]) -> None:
    """Layout: 4-byte magic, u32 version, u32 descriptor length, UTF-8 JSON descriptor,
    u32 tensor count, then per tensor u32 ndim, ndim x u32 dims, float32 data."""
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    desc = json.dumps(descriptor, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(desc)))
        fh.write(desc)
        fh.write(struct.pack("<I", len(weights)))
        for w in weights:
            w = np.asarray(w)
            fh.write(struct.pack("<I", w.ndim))
            fh.write(struct.pack(f"<{w.ndim}I", *w.shape))
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())


def read_checkpoint(path: str | Path, magic: bytes) -> tuple[dict, list[np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:4] != magic:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}, expected {magic!r}")
    version, dlen = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    off = 12
    descriptor = json.loads(data[off:off + dlen].decode())
    off += dlen
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    weights = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        weights.append(arr.astype(np.float64))
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    return descriptor, weights


def quantize(weights: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Round weights to float32 precision, matching what a checkpoint stores."""
    return [np.asarray(w, dtype=np.float32).astype(np.float64) for w in weights]
