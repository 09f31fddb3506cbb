"""Binary PGM (P5, maxval 255) rasters for images and masks."""

from __future__ import annotations

from pathlib import Path

import numpy as np


class PNMFormatError(ValueError):
    pass


def quantize(values: np.ndarray) -> np.ndarray:
    """[0, 1] floats to bytes, rounding half away from zero."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(255.0 * v + 0.5).astype(np.uint8)


def encode_pgm(raster: np.ndarray) -> bytes:
    h, w = raster.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(raster, dtype=np.uint8).tobytes()


def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    # header fields separated by whitespace; '#' comments run to end of line
    out, pos = [], 0
    while len(out) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(buf):
            raise PNMFormatError("truncated header")
        if buf[pos : pos + 1] == b"#":
            end = buf.find(b"\n", pos)
            pos = len(buf) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        out.append(buf[start:pos])
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise PNMFormatError("header must end with a single whitespace byte")
    return out, pos + 1


def decode_pgm(buf: bytes) -> np.ndarray:
    toks, pos = _tokens(buf, 4)
    if toks[0] != b"P5":
        raise PNMFormatError(f"unsupported magic {toks[0]!r}; only binary P5 is read")
    try:
        w, h, maxval = (int(t) for t in toks[1:])
    except ValueError as exc:
        raise PNMFormatError("non-integer header field") from exc
    if maxval != 255:
        raise PNMFormatError(f"maxval {maxval} unsupported; expected 255")
    if w <= 0 or h <= 0:
        raise PNMFormatError("non-positive dimensions")
    payload = buf[pos:]
    if len(payload) < w * h:
        raise PNMFormatError(f"truncated payload: {len(payload)} of {w * h} bytes")
    return np.frombuffer(payload[: w * h], dtype=np.uint8).reshape(h, w).copy()


def write_image(image: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(encode_pgm(quantize(image)))


def write_mask(mask: np.ndarray, path: str | Path) -> None:
    m = np.asarray(mask)
    if not np.isin(m, (0, 1)).all():
        raise PNMFormatError("mask values must be 0 or 1")
    Path(path).write_bytes(encode_pgm(m.astype(np.uint8) * 255))


def read_image(path: str | Path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes()).astype(np.float64) / 255.0


def read_mask(path: str | Path) -> np.ndarray:
    raw = decode_pgm(Path(path).read_bytes())
    if not np.isin(raw, (0, 255)).all():
        raise PNMFormatError(f"{path}: mask pixels must be 0 or 255")
    return (raw == 255).astype(np.uint8)
