"""Finite-difference verification of every differentiable op and of a full model forward."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .config import RunConfig
from .decoder import bce_loss
from .model import build_model
from .tensor import Tensor, finite_diff_check

KINK_TOL = 1e-3

Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Tensor]]]


def _leaf(rng, *shape, lo=None):
    a = rng.standard_normal(shape)
    if lo is not None:
        # keep relu inputs away from the kink so central differences stay smooth
        a = np.where(np.abs(a) < lo, np.sign(a + 1e-12) * lo, a)
    return Tensor(a, requires_grad=True)


def _unary(fn, *shape, lo=None) -> Case:
    def case(rng):
        x = _leaf(rng, *shape, lo=lo)
        w = Tensor(rng.standard_normal(fn(x).shape))
        return (lambda: T.sum(T.mul(fn(x), w))), [x]
    return case


def _binary(fn, sa, sb) -> Case:
    def case(rng):
        a, b = _leaf(rng, *sa), _leaf(rng, *sb)
        w = Tensor(rng.standard_normal(fn(a, b).shape))
        return (lambda: T.sum(T.mul(fn(a, b), w))), [a, b]
    return case


def _layer_norm(rng):
    x, g, b = _leaf(rng, 3, 5), _leaf(rng, 5), _leaf(rng, 5)
    w = Tensor(rng.standard_normal((3, 5)))
    return (lambda: T.sum(T.mul(T.layer_norm(x, g, b), w))), [x, g, b]


def _conv(stride, pad):
    def case(rng):
        x, k, b = _leaf(rng, 2, 6, 6), _leaf(rng, 3, 2, 4 if stride == 2 else 3, 4 if stride == 2 else 3), _leaf(rng, 3)
        w = Tensor(rng.standard_normal(T.conv2d(x, k, b, stride=stride, pad=pad).shape))
        return (lambda: T.sum(T.mul(T.conv2d(x, k, b, stride=stride, pad=pad), w))), [x, k, b]
    return case


def _log_softmax(rng):
    x = _leaf(rng, 2, 3, 3)
    y = Tensor(rng.standard_normal((2, 3, 3)))
    return (lambda: T.sum(T.mul(T.log_softmax(x, axis=0), y))), [x]


def _stack_mean(rng):
    xs = [_leaf(rng, 2, 3) for _ in range(3)]
    w = Tensor(rng.standard_normal((2, 3)))
    return (lambda: T.sum(T.mul(T.stack_mean(xs), w))), xs


def _concat(rng):
    a, b = _leaf(rng, 2, 3, 2), _leaf(rng, 1, 3, 2)
    w = Tensor(rng.standard_normal((3, 3, 2)))
    return (lambda: T.sum(T.mul(T.concat_channels([a, b]), w))), [a, b]


OP_CASES: dict[str, Case] = {
    "add": _binary(T.add, (3, 4), (1, 4)),
    "sub": _binary(T.sub, (3, 4), (3, 1)),
    "mul": _binary(T.mul, (2, 3, 4), (3, 4)),
    "matmul": _binary(T.matmul, (3, 4), (4, 2)),
    "relu": _unary(T.relu, 4, 5, lo=1e-2),
    "sigmoid": _unary(T.sigmoid, 4, 5),
    "reshape": _unary(lambda x: T.reshape(x, (6, 2)), 3, 4),
    "transpose": _unary(lambda x: T.transpose(x, (1, 2, 0)), 2, 3, 4),
    "sum_axis": _unary(lambda x: T.sum(x, axis=1, keepdims=True), 3, 4),
    "mean": _unary(lambda x: T.mean(x, axis=0), 3, 4),
    "softmax": _unary(T.softmax_lastdim, 3, 5),
    "log_softmax": _log_softmax,
    "layer_norm": _layer_norm,
    "conv3x3": _conv(1, 1),
    "conv4x4_stride2": _conv(2, 1),
    "resize_bilinear": _unary(lambda x: T.resize_bilinear(x, 7, 5), 2, 3, 4),
    "upsample_x2": _unary(lambda x: T.bilinear_upsample(x, 2), 2, 3, 3),
    "avg_pool": _unary(lambda x: T.avg_pool(x, 2), 2, 4, 4),
    "stack_mean": _stack_mean,
    "concat": _concat,
}


def check_ops(seed: int = 0, eps: float = 1e-5) -> dict[str, float]:
    """Worst relative error per primitive, over all of its differentiable inputs."""
    out = {}
    for name, case in OP_CASES.items():
        rng = np.random.default_rng([seed, len(out)])
        f, inputs = case(rng)
        out[name] = max(finite_diff_check(f, x, eps=eps) for x in inputs)
    return out


def check_model(config: RunConfig | None = None, size: int = 32, seed: int = 0,
                coords_per_tensor: int = 3, eps: float = 1e-5, kinks: list | None = None) -> dict[str, float]:
    """Worst relative error per parameter group for the BCE loss of one synthetic episode.

    Probes that straddle a relu switch are excluded (see ``finite_diff_check``)
    and reported through ``kinks`` as ``(parameter name, flat index)``.
    """
    config = (config or RunConfig()).replace(image_size=size)
    model = build_model(config)
    rng = np.random.default_rng(seed)
    s_img, q_img = rng.uniform(size=(size, size)), rng.uniform(size=(size, size))
    yy, xx = np.mgrid[0:size, 0:size]
    s_mask = ((xx - size * 0.4) ** 2 + (yy - size * 0.5) ** 2 < (size * 0.25) ** 2).astype(np.uint8)
    q_mask = np.roll(s_mask, size // 8, axis=1)
    f = lambda: bce_loss(model.forward(s_img, s_mask, q_img, 1), q_mask)
    worst: dict[str, float] = {}
    for name, p in model.named_parameters():
        coords = rng.choice(p.size, size=min(coords_per_tensor, p.size), replace=False)
        group = name.split(".")[0]
        skipped: list[int] = []
        err = finite_diff_check(f, p, eps=eps, coords=coords, kink_tol=KINK_TOL, kinks=skipped)
        worst[group] = max(worst.get(group, 0.0), err)
        if kinks is not None:
            kinks.extend((name, i) for i in skipped)
    return worst


def run_suite(config: RunConfig | None = None, seed: int = 0) -> tuple[dict[str, float], list]:
    """Errors keyed ``op/<name>`` and ``model/<group>``, plus the skipped kink probes."""
    kinks: list = []
    res = {f"op/{k}": v for k, v in check_ops(seed).items()}
    res.update({f"model/{k}": v for k, v in check_model(config, seed=seed, kinks=kinks).items()})
    return res, kinks
