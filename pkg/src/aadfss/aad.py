"""Adaptive attention distillation: class queries refined across the three scales."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .correlation import flatten_locations
from .nn import LayerNorm, Linear, Module
from .tensor import ShapeError, Tensor

VARIANTS = ("aad", "maskadd", "concat")


class ConfigurationError(ValueError):
    pass


def initial_queries(N: int, l: int, seed: int) -> Tensor:
    """N x l standard normal draws scaled by 1/sqrt(l), fixed by ``seed``."""
    return Tensor(np.random.default_rng(seed).standard_normal((N, l)) / np.sqrt(l))


def foreground(P: Tensor, M: Tensor) -> Tensor:
    """Gate an l x H x W map by an H x W mask."""
    if P.shape[1:] != M.shape:
        raise ShapeError(f"feature map {P.shape} and mask {M.shape} disagree spatially")
    return T.mul(P, T.reshape(M, (1,) + M.shape))


class AQG(Module):
    """One query-update stage: attention, residual, optional LayerNorm, then an l -> 2l -> l MLP."""

    def __init__(self, l: int, rng: np.random.Generator, layer_norm: bool = True):
        if layer_norm:
            self.norm = LayerNorm(l)
        self.fc1 = Linear(l, 2 * l, rng)
        self.fc2 = Linear(2 * l, l, rng, gain=1.0)
        self.l = l

    def mlp(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


def _check(q: Tensor, keys: Tensor, values: Tensor) -> None:
    if keys.shape[0] != values.shape[0]:
        raise ConfigurationError(
            f"support has {keys.shape[0]} locations but query has {values.shape[0]}; "
            "resize support and query images to the same resolution"
        )
    if not (q.shape[1] == keys.shape[1] == values.shape[1]):
        raise ShapeError(f"query width {q.shape[1]} vs features {keys.shape[1]}/{values.shape[1]}")


def aqg_step(stage: AQG, q: Tensor, F_s: Tensor, F_q: Tensor) -> Tensor:
    """q' = MLP(LayerNorm(softmax(q F_s^T / sqrt(l)) F_q + q)) on flattened foreground features."""
    _check(q, F_s, F_q)
    attn = T.softmax_lastdim(T.matmul(q, T.transpose(F_s)) * (1.0 / np.sqrt(stage.l)))
    h = T.matmul(attn, F_q) + q
    return stage.mlp(stage.norm(h))


def aqg_maskadd_step(stage: AQG, q: Tensor, f_s: Tensor, f_q: Tensor, m_s: Tensor, m_q: Tensor) -> Tensor:
    """Mask-logit variant: softmax(m_q + q (f_s * m_s)^T / sqrt(l)) f_q + q, then MLP."""
    _check(q, f_s, f_q)
    keys = T.mul(f_s, T.reshape(m_s, (m_s.size, 1)))
    logits = T.matmul(q, T.transpose(keys)) * (1.0 / np.sqrt(stage.l)) + T.reshape(m_q, (1, m_q.size))
    h = T.matmul(T.softmax_lastdim(logits), f_q) + q
    return stage.mlp(h)


def aqg_concat_step(stage: AQG, q: Tensor, f_s: Tensor, f_q: Tensor, m_s: Tensor, m_q: Tensor) -> Tensor:
    """Concatenated-stream variant: keys, values and mask logits stacked over both images' locations."""
    _check(q, f_s, f_q)
    kv = T.concat([f_s, f_q], axis=0)
    m = T.concat([T.reshape(m_s, (1, m_s.size)), T.reshape(m_q, (1, m_q.size))], axis=1)
    logits = T.matmul(q, T.transpose(kv)) * (1.0 / np.sqrt(stage.l)) + m
    h = T.matmul(T.softmax_lastdim(logits), kv) + q
    return stage.mlp(h)


class AADLearner(Module):
    """Three unshared AQG stages applied in order 1/8 -> 1/16 -> 1/32."""

    def __init__(self, l: int, rng: np.random.Generator, variant: str = "aad"):
        if variant not in VARIANTS:
            raise ConfigurationError(f"fusion must be one of {VARIANTS}, got {variant!r}")
        self.stages = [AQG(l, rng, layer_norm=variant == "aad") for _ in range(3)]
        self.variant = variant

    def step(self, i: int, q: Tensor, P_s: Tensor, P_q: Tensor, M_s: Tensor, M_q: Tensor) -> Tensor:
        stage = self.stages[i]
        if self.variant == "aad":
            F_s = flatten_locations(foreground(P_s, M_s))
            F_q = flatten_locations(foreground(P_q, M_q))
            return aqg_step(stage, q, F_s, F_q)
        f_s, f_q = flatten_locations(P_s), flatten_locations(P_q)
        m_s = T.reshape(M_s, (M_s.size,))
        m_q = T.reshape(M_q, (M_q.size,))
        fn = aqg_maskadd_step if self.variant == "maskadd" else aqg_concat_step
        return fn(stage, q, f_s, f_q, m_s, m_q)

    def distill(self, q_in: Tensor, P_s: list[Tensor], P_q: list[Tensor],
                M_s: list[Tensor], M_q: list[Tensor]) -> Tensor:
        if not (len(P_s) == len(P_q) == len(M_s) == len(M_q) == 3):
            raise ShapeError("distill needs all three scales")
        q = q_in
        for i in range(3):
            q = self.step(i, q, P_s[i], P_q[i], M_s[i], M_q[i])
        return q
