"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every op records a closure that maps the output gradient to parent
gradients. ``backward`` walks the recorded nodes in reverse topological
order exactly once and then releases the graph, so a second call without a
fresh forward pass raises :class:`StaleGraphError`.
"""

from __future__ import annotations

import contextlib
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested op."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared in a tensor."""


class StaleGraphError(RuntimeError):
    """backward was requested on a graph that was already consumed."""


_GRAD_ENABLED = True


class FlopCounter:
    """Multiply-accumulate counter fed by matmul and conv2d."""

    def __init__(self):
        self.macs = 0

    def add(self, n: int) -> None:
        self.macs += int(n)


_COUNTERS: list[FlopCounter] = []


@contextlib.contextmanager
def count_flops():
    counter = FlopCounter()
    _COUNTERS.append(counter)
    try:
        yield counter
    finally:
        _COUNTERS.remove(counter)


def _count(n: int) -> None:
    for c in _COUNTERS:
        c.add(n)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {where}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_stale", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, "Tensor()")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._stale = False
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_nonscalar()

    def detach(self) -> Tensor:
        return _wrap(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> Tensor:
        return transpose(self)


def _raise_nonscalar():
    raise ShapeError("item() requires a single-element tensor")


def _wrap(arr: np.ndarray) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = arr
    t.grad = None
    t.requires_grad = False
    t._parents = ()
    t._backward = None
    t._stale = False
    t._op = "const"
    return t


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    _check_finite(data, op)
    out = _wrap(data)
    out._op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    # never in-place: incoming arrays may be shared between parents
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: tuple, b: tuple, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError as exc:
        raise ShapeError(f"{op}: shapes {a} and {b} do not broadcast") from exc


# ----------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "sub")

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "mul")

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward, "mul")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0  # subgradient at 0 is 0

    def backward(g):
        _accum(x, g * mask)

    return _result(x.data * mask, (x,), backward, "relu")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g):
        _accum(x, g * y * (1.0 - y))

    return _result(y, (x,), backward, "sigmoid")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of zero tensors")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(lo, hi)
                _accum(t, g[tuple(idx)])

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Stack c_k x H x W maps into a (sum c_k) x H x W map."""
    for t in tensors:
        if t.ndim != 3:
            raise ShapeError(f"concat_channels expects c x H x W maps, got {t.shape}")
    return concat(tensors, axis=0)


# ----------------------------------------------------------------------------
# shape ops and reductions


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        y = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {src} to {tuple(shape)}") from exc

    def backward(g):
        _accum(x, g.reshape(src))

    return _result(y, (x,), backward, "reshape")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        _accum(x, g.transpose(inv))

    return _result(x.data.transpose(axes), (x,), backward, "transpose")


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    src = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, src))

    return _result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ----------------------------------------------------------------------------
# linear algebra and nn primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    _count(a.shape[0] * a.shape[1] * b.shape[1])

    def backward(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _result(a.data @ b.data, (a, b), backward, "matmul")


def softmax_lastdim(x: Tensor) -> Tensor:
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError("softmax over an empty last axis")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        _accum(x, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _result(y, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = 0) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def backward(g):
        _accum(x, g - p * g.sum(axis=axis, keepdims=True))

    return _result(y, (x,), backward, "log_softmax")


LN_EPS = 1e-5


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    l = x.shape[-1]
    if gamma.shape != (l,) or beta.shape != (l,):
        raise ShapeError(f"layer_norm affine params must have shape ({l},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=lead))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=lead))
        if x.requires_grad:
            dxh = g * gamma.data
            _accum(
                x,
                inv
                * (
                    dxh
                    - dxh.mean(axis=-1, keepdims=True)
                    - xhat * (dxh * xhat).mean(axis=-1, keepdims=True)
                ),
            )

    return _result(xhat * gamma.data + beta.data, (x, gamma, beta), backward, "layer_norm")


def _conv_out(n: int, k: int, stride: int, pad: int, what: str) -> int:
    span = n + 2 * pad - k
    if span < 0 or span % stride:
        raise ShapeError(
            f"conv2d: ({what}={n} + 2*{pad} - {k}) / {stride} + 1 is not a positive integer"
        )
    return span // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Direct cross-correlation of a c_in x H x W map with c_out x c_in x k x k filters."""
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d expects c x H x W input and 4-D weights, got {x.shape}, {w.shape}")
    c_in, H, W = x.shape
    c_out, wc, kh, kw = w.shape
    if wc != c_in:
        raise ShapeError(f"conv2d: weight expects {wc} input channels, input has {c_in}")
    if b is not None and b.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({c_out},)")
    Ho = _conv_out(H, kh, stride, pad, "H")
    Wo = _conv_out(W, kw, stride, pad, "W")
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = np.empty((c_in, kh, kw, Ho, Wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i : i + stride * Ho : stride, j : j + stride * Wo : stride]
    cols = cols.reshape(c_in * kh * kw, Ho * Wo)
    wmat = w.data.reshape(c_out, -1)
    out = wmat @ cols
    if b is not None:
        out = out + b.data[:, None]
    _count(c_out * c_in * kh * kw * Ho * Wo)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g.reshape(c_out, Ho * Wo)
        if w.requires_grad:
            _accum(w, (g2 @ cols.T).reshape(w.shape))
        if b is not None and b.requires_grad:
            _accum(b, g2.sum(axis=1))
        if x.requires_grad:
            dcols = (wmat.T @ g2).reshape(c_in, kh, kw, Ho, Wo)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += dcols[:, i, j]
            _accum(x, dxp[:, pad : pad + H, pad : pad + W] if pad else dxp)

    return _result(out.reshape(c_out, Ho, Wo), parents, backward, "conv2d")


@lru_cache(maxsize=64)
def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i holds the half-pixel-center linear weights of output i over the input grid."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    m.setflags(write=False)
    return m


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if x.ndim != 3:
        raise ShapeError(f"resize_bilinear expects c x H x W, got {x.shape}")
    _, H, W = x.shape
    ah = interp_matrix(H, out_h)
    aw = interp_matrix(W, out_w)

    def backward(g):
        _accum(x, ah.T @ g @ aw)

    return _result(ah @ x.data @ aw.T, (x,), backward, "resize_bilinear")


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    if int(factor) != factor or factor < 2:
        raise ShapeError(f"upsample factor must be an integer >= 2, got {factor}")
    _, H, W = x.shape
    return resize_bilinear(x, H * int(factor), W * int(factor))


def avg_pool(x: Tensor, block: int) -> Tensor:
    """Non-overlapping block average over the trailing two axes."""
    *lead, H, W = x.shape
    if H % block or W % block:
        raise ShapeError(f"avg_pool: {H}x{W} not divisible by {block}")
    y = x.data.reshape(*lead, H // block, block, W // block, block).mean(axis=(-3, -1))

    def backward(g):
        e = np.repeat(np.repeat(g, block, axis=-2), block, axis=-1)
        _accum(x, e / (block * block))

    return _result(y, (x,), backward, "avg_pool")


def stack_mean(tensors: Sequence[Tensor]) -> Tensor:
    """Arithmetic mean of equally shaped tensors."""
    if not tensors:
        raise ShapeError("mean of zero tensors")
    acc = tensors[0]
    for t in tensors[1:]:
        if t.shape != acc.shape:
            raise ShapeError(f"stack_mean: {t.shape} != {acc.shape}")
        acc = add(acc, t)
    return acc if len(tensors) == 1 else mul(acc, 1.0 / len(tensors))


# ----------------------------------------------------------------------------
# graph execution


class Graph:
    """Topologically ordered record of the nodes reachable from a root."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> Graph:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        return cls(order)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n.is_leaf]

    def clear(self) -> None:
        for n in self.nodes:
            n.grad = None


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._stale:
        raise StaleGraphError("graph already consumed by a previous backward; run forward again")
    if not loss.requires_grad:
        raise StaleGraphError("loss does not depend on any tensor that requires grad")
    graph = Graph.from_root(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(graph.nodes):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)
    for node in graph.nodes:
        if not node.is_leaf:
            node.grad = None
            node._parents = ()
            node._backward = None
            node._stale = True


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ----------------------------------------------------------------------------
# verification


def finite_diff_check(
    f: Callable[[], Tensor],
    x: Tensor,
    eps: float = 1e-5,
    coords: Sequence[int] | None = None,
    kink_tol: float | None = None,
    kinks: list[int] | None = None,
) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    ``f`` is re-evaluated from scratch for every probe and must read ``x.data``.
    ``coords`` restricts the probe to a subset of flat indices.

    With ``kink_tol`` set, a coordinate whose forward and backward one-sided
    slopes differ by more than ``kink_tol * max(1, |analytic|)`` straddles a
    non-differentiable point (a relu switching inside the probe interval). It
    is left out of the maximum and its index appended to ``kinks``. A wrong
    gradient shows equal one-sided slopes, so it is never masked this way.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError(f"eps={eps} outside [1e-6, 1e-4]")
    if not x.requires_grad:
        raise ValueError("finite_diff_check needs x.requires_grad")
    x.grad = None
    out = f()
    if out.size != 1:
        raise ShapeError(f"finite_diff_check needs a scalar-valued f, got {out.shape}")
    f0 = out.item()
    backward(out)
    analytic = np.zeros(x.size) if x.grad is None else x.grad.reshape(-1).copy()
    x.grad = None
    flat = x.data.reshape(-1)
    idx = range(x.size) if coords is None else coords
    worst = 0.0
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            scale = max(1.0, abs(analytic[i]))
            if kink_tol is not None and abs((fp - f0) - (f0 - fm)) / eps > kink_tol * scale:
                if kinks is not None:
                    kinks.append(int(i))
                continue
            num = (fp - fm) / (2 * eps)
            worst = max(worst, abs(analytic[i] - num) / scale)
    return worst
