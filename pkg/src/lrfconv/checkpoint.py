"""Binary checkpoint files: named float64 tensors plus a model-spec hash.

Layout (little-endian):

    magic  b"LSDCKPT1"
    u32    format version (1)
    u64    training step count
    u16    spec-hash length, then that many utf-8 bytes
    u64    tensor count
    per tensor:
        u16  name length, then utf-8 name
        u8   ndim
        u64  dims[ndim]
        f64  data (row-major)

Round trips are byte-exact because float64 payloads are stored raw.
"""
from __future__ import annotations

import struct

import numpy as np

from .autodiff import Tensor

MAGIC = b"LSDCKPT1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays, spec_hash, step):
    """Write named arrays (Tensor or ndarray values) to ``path``."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", int(step)))
        hb = spec_hash.encode()
        fh.write(struct.pack("<H", len(hb)))
        fh.write(hb)
        fh.write(struct.pack("<Q", len(arrays)))
        for name, value in arrays.items():
            data = value.data if isinstance(value, Tensor) else np.asarray(value)
            data = np.ascontiguousarray(data, dtype=np.float64)
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", data.ndim))
            for d in data.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(data.tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns ``(arrays, spec_hash, step)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(raw):
            raise CheckpointError(f"{path}: truncated checkpoint")
        out = raw[off:off + n]
        off += n
        return out

    if take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (step,) = struct.unpack("<Q", take(8))
    (hlen,) = struct.unpack("<H", take(2))
    spec_hash = take(hlen).decode()
    (count,) = struct.unpack("<Q", take(8))
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = tuple(struct.unpack("<Q", take(8))[0] for _ in range(ndim))
        n_items = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(8 * n_items), dtype="<f8").reshape(shape)
        arrays[name] = data.copy()
    if off != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after checkpoint payload")
    return arrays, spec_hash, step
