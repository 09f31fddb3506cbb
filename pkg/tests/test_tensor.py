import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aadfss import tensor as T
from aadfss.tensor import Tensor, backward, finite_diff_check


def param(a):
    return Tensor(a, requires_grad=True)


def weighted_sum(y, w):
    return T.sum(T.mul(y, Tensor(w)))


def fd_op(rng, make_out, x, w_shape=None):
    """Check d/dx sum(w * op(x)) against central differences."""
    out_shape = make_out().shape
    w = rng.standard_normal(out_shape)
    return finite_diff_check(lambda: weighted_sum(make_out(), w), x, eps=1e-5)


# ---- matmul


def test_matmul_identity():
    b = Tensor([[3, 4], [5, 6]])
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), b).data, [[3, 4], [5, 6]])


def test_matmul_hand_sum():
    assert T.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11.0]]


def test_matmul_shape_mismatch():
    with pytest.raises(T.ShapeError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_fd(rng):
    a, b = param(rng.standard_normal((5, 4))), param(rng.standard_normal((4, 3)))
    assert fd_op(rng, lambda: T.matmul(a, b), a) < 1e-5
    assert fd_op(rng, lambda: T.matmul(a, b), b) < 1e-5


@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_matmul_triple_loop(m, k, n, seed):
    r = np.random.default_rng(seed)
    A = r.integers(-9, 10, (m, k)).astype(float)
    B = r.integers(-9, 10, (k, n)).astype(float)
    C = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += A[i, p] * B[p, j]
            C[i, j] = s
    np.testing.assert_array_equal(T.matmul(Tensor(A), Tensor(B)).data, C)


# ---- softmax


def test_softmax_uniform_and_single():
    np.testing.assert_allclose(T.softmax_lastdim(Tensor([0.0, 0, 0])).data, [1 / 3] * 3)
    assert T.softmax_lastdim(Tensor([[-123.4]])).data.tolist() == [[1.0]]


def test_softmax_large_values_match_shifted_oracle():
    x = np.array([1000, 1000.5, 999])
    y = T.softmax_lastdim(Tensor(x)).data
    shifted = np.exp(x - 1000)
    np.testing.assert_allclose(y, shifted / shifted.sum(), rtol=0, atol=1e-15)
    assert abs(y.sum() - 1) < 1e-12


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.floats(-100, 100))
@settings(max_examples=80, deadline=None)
def test_softmax_rows_sum_to_one_and_shift_invariant(row, c):
    x = np.array(row)
    y = T.softmax_lastdim(Tensor(x)).data
    assert abs(y.sum() - 1) < 1e-9 and (y >= 0).all()
    np.testing.assert_allclose(T.softmax_lastdim(Tensor(x + c)).data, y, atol=1e-9)


def test_softmax_constant_functional_has_zero_grad(rng):
    x = param(rng.standard_normal((3, 5)))
    err = finite_diff_check(lambda: T.sum(T.softmax_lastdim(x)), x)
    assert err < 1e-9


# ---- layer norm


def test_layer_norm_constant_slice_is_zero():
    y = T.layer_norm(Tensor(np.full((2, 4), 3.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    np.testing.assert_array_equal(y.data, 0.0)


def test_layer_norm_pair():
    y = T.layer_norm(Tensor([1.0, -1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
    a = 1 / np.sqrt(1 + 1e-5)
    np.testing.assert_allclose(y.data, [a, -a], rtol=1e-14)


def test_layer_norm_fd(rng):
    x = param(rng.standard_normal((3, 4)))
    g = param(rng.standard_normal(4))
    b = param(rng.standard_normal(4))
    for t in (x, g, b):
        assert fd_op(rng, lambda: T.layer_norm(x, g, b), t) < 1e-4


# ---- conv2d


def test_conv_pointwise_scale():
    y = T.conv2d(Tensor(np.ones((1, 3, 3))), Tensor([[[[2.0]]]]), Tensor([0.0]))
    np.testing.assert_array_equal(y.data, np.full((1, 3, 3), 2.0))


def test_conv_hand_sum():
    y = T.conv2d(Tensor([[[1, 2], [3, 4]]]), Tensor(np.ones((1, 1, 2, 2))), Tensor([0.0]))
    assert y.data.tolist() == [[[10.0]]]


def test_conv_non_integral_output():
    with pytest.raises(T.ShapeError):
        T.conv2d(Tensor(np.ones((1, 6, 6))), Tensor(np.ones((1, 1, 3, 3))), stride=2, pad=1)


def naive_conv(x, w, b, stride, pad):
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    co, ci, k, _ = w.shape
    Ho = (xp.shape[1] - k) // stride + 1
    Wo = (xp.shape[2] - k) // stride + 1
    out = np.zeros((co, Ho, Wo))
    for o in range(co):
        for i in range(Ho):
            for j in range(Wo):
                patch = xp[:, i * stride : i * stride + k, j * stride : j * stride + k]
                out[o, i, j] = (patch * w[o]).sum() + b[o]
    return out


@pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (1, 1, 3), (2, 1, 4), (2, 0, 2)])
def test_conv_matches_naive(rng, stride, pad, k):
    x, w, b = rng.standard_normal((2, 8, 8)), rng.standard_normal((3, 2, k, k)), rng.standard_normal(3)
    y = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad)
    np.testing.assert_allclose(y.data, naive_conv(x, w, b, stride, pad), atol=1e-12)


@pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (1, 1, 3), (2, 1, 4)])
def test_conv_fd(rng, stride, pad, k):
    x = param(rng.standard_normal((2, 6, 6)))
    w = param(rng.standard_normal((3, 2, k, k)))
    b = param(rng.standard_normal(3))
    for t in (x, w, b):
        assert fd_op(rng, lambda: T.conv2d(x, w, b, stride=stride, pad=pad), t) < 1e-4


# ---- upsampling


def test_upsample_constant():
    y = T.bilinear_upsample(Tensor(np.full((2, 3, 5), 7.0)), 2)
    np.testing.assert_allclose(y.data, 7.0, rtol=1e-15)


def test_upsample_degenerate_grid():
    y = T.bilinear_upsample(Tensor([[[2.5]]]), 4)
    np.testing.assert_array_equal(y.data, np.full((1, 4, 4), 2.5))


def explicit_half_pixel(x, f):
    c, H, W = x.shape
    out = np.zeros((c, H * f, W * f))
    for i in range(H * f):
        for j in range(W * f):
            sy = min(max((i + 0.5) / f - 0.5, 0), H - 1)
            sx = min(max((j + 0.5) / f - 0.5, 0), W - 1)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, H - 1), min(x0 + 1, W - 1)
            dy, dx = sy - y0, sx - x0
            out[:, i, j] = (
                x[:, y0, x0] * (1 - dy) * (1 - dx)
                + x[:, y0, x1] * (1 - dy) * dx
                + x[:, y1, x0] * dy * (1 - dx)
                + x[:, y1, x1] * dy * dx
            )
    return out


def test_upsample_monotone_columns():
    x = np.array([[[0.0, 1.0], [0.0, 1.0]]])
    y = T.bilinear_upsample(Tensor(x), 2).data
    np.testing.assert_allclose(y, explicit_half_pixel(x, 2), atol=1e-15)
    assert (np.diff(y[0], axis=1) >= 0).all()
    np.testing.assert_allclose(y[0, 0], [0, 0.25, 0.75, 1.0])


def test_upsample_matches_explicit_and_fd(rng):
    x = param(rng.standard_normal((2, 3, 4)))
    np.testing.assert_allclose(T.bilinear_upsample(x, 3).data, explicit_half_pixel(x.data, 3), atol=1e-13)
    assert fd_op(rng, lambda: T.bilinear_upsample(x, 2), x) < 1e-6


# ---- pointwise


def test_pointwise_definitions(rng):
    x = Tensor(rng.standard_normal((3, 4, 4)))
    np.testing.assert_array_equal(T.mul(x, Tensor(np.zeros((3, 4, 4)))).data, 0.0)
    assert T.relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0, 0, 2]
    a, b = Tensor(rng.standard_normal((3, 2, 2))), Tensor(rng.standard_normal((5, 2, 2)))
    c = T.concat_channels([a, b])
    assert c.shape == (8, 2, 2)
    np.testing.assert_array_equal(c.data[:3], a.data)
    np.testing.assert_array_equal(c.data[3:], b.data)
    with pytest.raises(T.ShapeError):
        T.concat_channels([a, Tensor(np.ones((1, 3, 2)))])
    with pytest.raises(T.ShapeError):
        T.mul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


def test_relu_grad_at_zero_is_zero():
    x = param([0.0, 1.0])
    backward(T.sum(T.relu(x)))
    assert x.grad.tolist() == [0.0, 1.0]


def away_from_zero(rng, shape):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < 0.05, 0.5, x)


@pytest.mark.parametrize("seed", range(5))
def test_every_primitive_passes_fd(seed):
    r = np.random.default_rng(seed)
    x = param(away_from_zero(r, (3, 4)))
    y = param(r.standard_normal((3, 4)))
    b = param(r.standard_normal(4))
    checks = {
        "add": (lambda: T.add(x, b), [x, b]),
        "sub": (lambda: T.sub(x, y), [x, y]),
        "mul": (lambda: T.mul(x, b), [x, b]),
        "relu": (lambda: T.relu(x), [x]),
        "sigmoid": (lambda: T.sigmoid(x), [x]),
        "concat": (lambda: T.concat([x, y], axis=1), [x, y]),
        "reshape": (lambda: T.reshape(x, (2, 6)), [x]),
        "transpose": (lambda: T.transpose(x), [x]),
        "sum_axis": (lambda: T.sum(x, axis=0), [x]),
        "mean": (lambda: T.mean(x, axis=1, keepdims=True), [x]),
        "softmax": (lambda: T.softmax_lastdim(x), [x]),
        "log_softmax": (lambda: T.log_softmax(x, axis=0), [x]),
        "avg_pool": (lambda: T.avg_pool(T.reshape(T.concat([x, y], axis=0), (1, 6, 4)), 2), [x, y]),
        "stack_mean": (lambda: T.stack_mean([x, y, x]), [x, y]),
    }
    for name, (fn, wrt) in checks.items():
        for t in wrt:
            assert fd_op(r, fn, t) < 1e-3, name


# ---- backward semantics


def test_backward_linear_and_quadratic(rng):
    x = param(rng.standard_normal((2, 2)))
    backward(T.sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 2)))
    x.grad = None
    backward(T.sum(T.mul(x, x)) * 0.5)
    np.testing.assert_allclose(x.grad, x.data, rtol=1e-15)


def test_backward_errors(rng):
    x = param(rng.standard_normal(3))
    with pytest.raises(T.ShapeError):
        backward(T.mul(x, 2.0))
    loss = T.sum(T.mul(x, x))
    backward(loss)
    with pytest.raises(T.StaleGraphError):
        backward(loss)


def test_shared_subexpression_accumulates(rng):
    x = param(rng.standard_normal((3, 3)))

    def f():
        s = T.softmax_lastdim(x)
        return T.sum(T.mul(s, s)) + T.sum(T.matmul(s, x))

    assert finite_diff_check(f, x) < 1e-6


def test_graph_visits_each_node_once(rng):
    x = param(rng.standard_normal((2, 2)))
    h = T.mul(x, x)
    loss = T.sum(T.add(h, h))
    g = T.Graph.from_root(loss)
    assert len({id(n) for n in g.nodes}) == len(g.nodes) == 4
    assert g.nodes[-1] is loss and g.nodes[0] is x
    backward(loss)
    assert x.grad is not None
    g.clear()
    assert all(n.grad is None for n in g.nodes)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_rejected():
    with pytest.raises(T.NonFiniteError):
        Tensor([1.0, np.nan])
    with pytest.raises(T.NonFiniteError):
        T.mul(Tensor([1e308]), Tensor([1e308]))


def test_no_grad_records_nothing(rng):
    x = param(rng.standard_normal(3))
    with T.no_grad():
        y = T.mul(x, x)
    assert not y.requires_grad and y.is_leaf


def test_flop_counter():
    with T.count_flops() as c:
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4))))
        T.conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((3, 2, 3, 3))))
    assert c.macs == 2 * 3 * 4 + 3 * 2 * 9 * 2 * 2


# ---- finite-difference harness


def test_fd_check_exact_for_linear(rng):
    x = param(rng.standard_normal((4, 3)))
    assert finite_diff_check(lambda: T.sum(x), x) < 1e-10


def test_fd_check_rejects_nonscalar_and_bad_eps(rng):
    x = param(rng.standard_normal(3))
    with pytest.raises(T.ShapeError):
        finite_diff_check(lambda: T.mul(x, 1.0), x)
    with pytest.raises(ValueError):
        finite_diff_check(lambda: T.sum(x), x, eps=1e-2)


def test_fd_check_catches_wrong_gradient(rng):
    x = param(rng.standard_normal(4))

    def broken():
        # value 2*sum(x) but gradient of sum(x)
        y = T.sum(x)
        return T.add(y, Tensor(y.data))

    assert finite_diff_check(broken, x) > 0.5
