"""Flat binary parameter container.

Layout: ``b"AADCKPT1"`` then, per entry, name length (u32 LE), UTF-8 name,
rank (u32 LE), each dim (u32 LE), and the row-major little-endian f64 payload.
Entries follow insertion order so that save -> load -> save is byte-identical.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"AADCKPT1"


class CheckpointError(ValueError):
    pass


def encode(entries: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC]
    for name, arr in entries.items():
        a = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(np.ascontiguousarray(a).tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> dict[str, np.ndarray]:
    if buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic; not an AADCKPT1 container")
    pos = len(MAGIC)
    out: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError("truncated checkpoint")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    while pos < len(buf):
        (n,) = struct.unpack("<I", take(4))
        name = take(n).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64).reshape(dims)
        if name in out:
            raise CheckpointError(f"duplicate entry {name!r}")
        out[name] = arr
    return out


def save(path: str | Path, entries: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode(entries))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())
