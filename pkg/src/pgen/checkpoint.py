"""Checkpoint container and its binary file format.

Layout (all integers unsigned 32-bit little-endian)::

    b"PGEN1"  count
    count x { name_len  name(utf-8)  rank  dims[rank]  float32[prod(dims)] }
    json_len  json(utf-8)   # {"train_state": ..., "scores": ...}
"""
from __future__ import annotations

import io as _io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .io import AsyncWriter, resolve

MAGIC = b"PGEN1"


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    train_state: dict = field(default_factory=dict)
    scores: dict[str, float] = field(default_factory=dict)

    @property
    def step(self) -> int:
        return int(self.train_state.get("step", 0))


def to_bytes(ckpt: Checkpoint) -> bytes:
    buf = _io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(ckpt.params)))
    for name, arr in ckpt.params.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    blob = json.dumps({"train_state": ckpt.train_state, "scores": ckpt.scores}, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    return buf.getvalue()


def from_bytes(data: bytes) -> Checkpoint:
    view = memoryview(data)
    if bytes(view[:5]) != MAGIC:
        raise FormatError("not a checkpoint: bad magic")
    off = 5

    def u32(n=1):
        nonlocal off
        vals = struct.unpack_from(f"<{n}I", view, off)
        off += 4 * n
        return vals

    try:
        (count,) = u32()
        params = {}
        for _ in range(count):
            (n,) = u32()
            name = bytes(view[off : off + n]).decode("utf-8")
            off += n
            (rank,) = u32()
            dims = u32(rank) if rank else ()
            size = int(np.prod(dims)) if rank else 1
            params[name] = np.frombuffer(view, dtype="<f4", count=size, offset=off).reshape(dims).astype(np.float32)
            off += 4 * size
        (n,) = u32()
        blob = json.loads(bytes(view[off : off + n]).decode("utf-8"))
        off += n
    except (struct.error, ValueError) as e:
        raise FormatError(f"truncated or corrupt checkpoint: {e}") from None
    if off != len(data):
        raise FormatError(f"{len(data) - off} trailing bytes after checkpoint")
    return Checkpoint(params, blob.get("train_state", {}), blob.get("scores", {}))


def save(ckpt: Checkpoint, uri: str) -> AsyncWriter:
    """Queue ``ckpt`` for writing; the caller owns the returned writer and
    must close it (or call ``flush_barrier``) before reading the file."""
    w = AsyncWriter(uri)
    w.submit(to_bytes(ckpt))
    return w


def load(uri: str) -> Checkpoint:
    with open(resolve(uri), "rb") as f:
        return from_bytes(f.read())
