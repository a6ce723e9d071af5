"""Versioned binary checkpoint of named float64 tensors.

Layout (little endian)::

    magic  b"ICESCKPT"          8 bytes
    version                     u16
    count                       u32
    repeated count times:
        name length, name       u16, utf-8 bytes
        ndim, shape             u8, u32 * ndim
        data                    f64 * prod(shape), C order
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ICESCKPT"
VERSION = 1


class CheckpointError(ValueError):
    """Wrong magic, unsupported version or truncated payload."""


def dumps(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic")
    pos = len(MAGIC)

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise CheckpointError("truncated checkpoint")
        out = struct.unpack_from(fmt, blob, pos)
        pos += size
        return out

    version, count = take("<HI")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out = {}
    for _ in range(count):
        (n,) = take("<H")
        name = bytes(take(f"<{n}s")[0]).decode()
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I")
        size = int(np.prod(shape, dtype=np.int64))
        out[name] = np.frombuffer(bytes(take(f"<{size * 8}s")[0]), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(blob):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return out


def save(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
