"""Shared multi-scale encoder, per-scale projection to the query width, and mask pyramids."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module
from .tensor import ShapeError, Tensor

SCALES = (8, 16, 32)


class Encoder(Module):
    """Two stride-2 stem convs to 1/4, then one stride-2 stage per output scale.

    Every downsampling conv is 4x4 / stride 2 / pad 1, which halves even sizes
    exactly.
    """

    def __init__(self, rng: np.random.Generator, in_channels: int = 1, stem_width: int = 16,
                 widths: tuple[int, int, int] = (32, 64, 128)):
        self.stem = [
            Conv2d(in_channels, stem_width, 4, rng, stride=2, pad=1),
            Conv2d(stem_width, stem_width, 4, rng, stride=2, pad=1),
        ]
        chans = (stem_width,) + tuple(widths)
        self.stages = [Conv2d(chans[i], chans[i + 1], 4, rng, stride=2, pad=1) for i in range(3)]
        self.widths = tuple(widths)

    def __call__(self, image: Tensor) -> list[Tensor]:
        return self.encode(image)

    def encode(self, image: Tensor) -> list[Tensor]:
        _, H, W = image.shape
        if H % 32 or W % 32:
            raise ShapeError(f"encoder input {H}x{W} must be divisible by 32")
        x = image
        for conv in self.stem:
            x = T.relu(conv(x))
        feats = []
        for conv in self.stages:
            x = T.relu(conv(x))
            feats.append(x)
        return feats


class Projection(Module):
    """1x1 conv per scale onto a common width ``l``."""

    def __init__(self, rng: np.random.Generator, widths: tuple[int, int, int], l: int):
        self.convs = [Conv2d(c, l, 1, rng, gain=1.0) for c in widths]
        self.l = l

    def __call__(self, feats: list[Tensor]) -> list[Tensor]:
        return [conv(f) for conv, f in zip(self.convs, feats)]


def downsample_mask(mask: np.ndarray, scale: int) -> Tensor:
    """Block-average a full-resolution binary mask to 1/scale resolution."""
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {SCALES}")
    m = np.asarray(mask, dtype=np.float64)
    H, W = m.shape
    if H % scale or W % scale:
        raise ShapeError(f"mask {H}x{W} not divisible by {scale}")
    return Tensor(m.reshape(H // scale, scale, W // scale, scale).mean(axis=(1, 3)))


def mask_pyramid(mask: np.ndarray) -> list[Tensor]:
    return [downsample_mask(mask, s) for s in SCALES]


def image_tensor(image: np.ndarray, scale: float = 1.0) -> Tensor:
    """H x W (or c x H x W) image in [0, 1] to a zero-centred c x H x W tensor, times ``scale``."""
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    return Tensor((a - 0.5) * scale)
