"""Correlation learner: attention that carries the support mask onto query locations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


def flatten_locations(f: Tensor) -> Tensor:
    """c x H x W -> (H*W) x c, locations row-major."""
    c, h, w = f.shape
    return T.transpose(T.reshape(f, (c, h * w)))


def amm_forward(f_q: Tensor, f_s: Tensor, m_s: Tensor) -> Tensor:
    """softmax(f_q f_s^T / sqrt(d)) m_s for flattened features; returns (HqWq) x 1."""
    if f_q.ndim != 2 or f_s.ndim != 2 or f_q.shape[1] != f_s.shape[1]:
        raise ShapeError(f"AMM feature widths differ: {f_q.shape} vs {f_s.shape}")
    if m_s.shape != (f_s.shape[0], 1):
        raise ShapeError(f"AMM support mask must be ({f_s.shape[0]}, 1), got {m_s.shape}")
    d = f_q.shape[1]
    attn = T.softmax_lastdim(T.matmul(f_q, T.transpose(f_s)) * (1.0 / np.sqrt(d)))
    return T.matmul(attn, m_s)


def coarse_mask(fq_map: Tensor, fs_map: Tensor, ms_map: Tensor) -> Tensor:
    """One scale of the correlation learner on c x H x W maps; returns Hq x Wq."""
    _, hq, wq = fq_map.shape
    if fs_map.shape[1:] != ms_map.shape:
        raise ShapeError(f"support map {fs_map.shape} vs mask {ms_map.shape}")
    m = T.reshape(ms_map, (ms_map.size, 1))
    out = amm_forward(flatten_locations(fq_map), flatten_locations(fs_map), m)
    return T.reshape(out, (hq, wq))


def correlation_forward(supp_feats: list[Tensor], query_feats: list[Tensor],
                        supp_masks: list[Tensor]) -> list[Tensor]:
    if not (len(supp_feats) == len(query_feats) == len(supp_masks)):
        raise ShapeError("support / query / mask pyramids have different depths")
    return [coarse_mask(fq, fs, ms) for fq, fs, ms in zip(query_feats, supp_feats, supp_masks)]


@dataclass
class SupportEncoding:
    """Raw per-scale support features and their downsampled masks."""

    feats: list[Tensor]
    masks: list[Tensor]


def average_supports(encodings: list[SupportEncoding]) -> SupportEncoding:
    """Per-scale arithmetic mean of K support encodings, features and masks separately."""
    if not encodings:
        raise ValueError("average_supports needs at least one support")
    if len(encodings) == 1:
        return encodings[0]
    depth = len(encodings[0].feats)
    feats = [T.stack_mean([e.feats[i] for e in encodings]) for i in range(depth)]
    masks = [T.stack_mean([e.masks[i] for e in encodings]) for i in range(depth)]
    return SupportEncoding(feats, masks)
