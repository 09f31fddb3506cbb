"""Fusion of coarse masks with distilled queries, the mixing decoder, loss and thresholding."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module
from .tensor import ShapeError, Tensor


def query_response_maps(q_hat: Tensor, P: Tensor) -> Tensor:
    """logistic(<q_n, P(., x, y)> / sqrt(l)) for every query n; N x H x W."""
    l, h, w = P.shape
    if q_hat.shape[1] != l:
        raise ShapeError(f"query width {q_hat.shape[1]} vs feature width {l}")
    r = T.matmul(q_hat, T.reshape(P, (l, h * w))) * (1.0 / np.sqrt(l))
    return T.reshape(T.sigmoid(r), (q_hat.shape[0], h, w))


def fuse(M: Tensor, q_hat: Tensor | None, P: Tensor) -> Tensor:
    """Mask-gated features, plus mask-gated query responses when queries are given."""
    if P.shape[1:] != M.shape:
        raise ShapeError(f"coarse mask {M.shape} vs features {P.shape}")
    gate = T.reshape(M, (1,) + M.shape)
    parts = [T.mul(P, gate)]
    if q_hat is not None:
        parts.append(T.mul(query_response_maps(q_hat, P), gate))
    return T.concat_channels(parts) if len(parts) > 1 else parts[0]


class Decoder(Module):
    """Three mixing modules from coarse to fine, then a bilinear jump to input size.

    Channel path for width l and entry width c: c -> l/2 -> (+skip 1/16) -> l/4
    -> (+skip 1/8) -> 16 -> 2.
    """

    def __init__(self, rng: np.random.Generator, entry: int, l: int):
        h1, h2 = l // 2, l // 4
        self.mix1 = [Conv2d(entry, h1, 3, rng, pad=1), Conv2d(h1, h1, 3, rng, pad=1)]
        self.skip16 = Conv2d(entry, h1, 1, rng, gain=1.0)
        self.mix2 = [Conv2d(h1, h2, 3, rng, pad=1), Conv2d(h2, h2, 3, rng, pad=1)]
        self.skip8 = Conv2d(entry, h2, 1, rng, gain=1.0)
        self.mix3 = [Conv2d(h2, 16, 3, rng, pad=1), Conv2d(16, 2, 3, rng, pad=1, gain=1.0)]
        self.entry = entry

    def __call__(self, fused: list[Tensor], out_hw: tuple[int, int]) -> Tensor:
        return self.decode(fused, out_hw)

    def decode(self, fused: list[Tensor], out_hw: tuple[int, int]) -> Tensor:
        if len(fused) != 3:
            raise ShapeError("decode needs fused maps at 1/8, 1/16 and 1/32")
        f8, f16, f32 = fused
        for f in fused:
            if f.shape[0] != self.entry:
                raise ShapeError(f"fused map has {f.shape[0]} channels; decoder built for {self.entry}")
        x = f32
        for conv in self.mix1:
            x = T.relu(conv(x))
        x = T.bilinear_upsample(x, 2) + self.skip16(f16)
        for conv in self.mix2:
            x = T.relu(conv(x))
        x = T.bilinear_upsample(x, 2) + self.skip8(f8)
        x = T.relu(self.mix3[0](x))
        x = self.mix3[1](x)
        return T.resize_bilinear(x, *out_hw)


def bce_loss(logits: Tensor, gt: np.ndarray) -> Tensor:
    """Mean per-pixel cross-entropy of the two-channel softmax against a binary mask."""
    y = np.asarray(gt)
    if logits.shape != (2,) + y.shape:
        raise ShapeError(f"logits {logits.shape} vs mask {y.shape}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("ground-truth mask must be binary")
    y = y.astype(np.float64)
    onehot = Tensor(np.stack([1.0 - y, y]))
    logp = T.log_softmax(logits, axis=0)
    return T.sum(T.mul(logp, onehot)) * (-1.0 / y.size)


def foreground_prob(logits: Tensor | np.ndarray) -> np.ndarray:
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    e = np.exp(z - z.max(axis=0, keepdims=True))
    return e[1] / e.sum(axis=0)


def predict(logits: Tensor | np.ndarray) -> np.ndarray:
    """Per-pixel argmax over (background, foreground); an exact tie goes to background.

    Compared as p_fg > 1/2, which equals p_fg > p_bg with p_bg = 1 - p_fg.
    """
    return (foreground_prob(logits) > 0.5).astype(np.uint8)
