import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aadfss import tensor as T
from aadfss.correlation import (
    SupportEncoding,
    amm_forward,
    average_supports,
    coarse_mask,
    flatten_locations,
)
from aadfss.encoder import Encoder, Projection, downsample_mask, image_tensor, mask_pyramid
from aadfss.tensor import ShapeError, Tensor, finite_diff_check
from oracles import amm_loops


# --- encoder ------------------------------------------------------------------


def test_encoder_pyramid_shapes(rng):
    enc = Encoder(rng)
    feats = enc(image_tensor(rng.uniform(size=(64, 64))))
    assert [f.shape for f in feats] == [(32, 8, 8), (64, 4, 4), (128, 2, 2)]
    P = Projection(rng, enc.widths, 24)(feats)
    assert [p.shape for p in P] == [(24, 8, 8), (24, 4, 4), (24, 2, 2)]


def test_encoder_rejects_indivisible_input(rng):
    with pytest.raises(ShapeError):
        Encoder(rng)(image_tensor(np.zeros((48, 40))))


def test_image_tensor_centres_and_scales():
    t = image_tensor(np.array([[0.0, 0.5, 1.0]]), scale=4.0)
    np.testing.assert_array_equal(t.data, [[[-2.0, 0.0, 2.0]]])


def test_one_encoder_serves_support_and_query(rng):
    # the same parameter objects must receive gradient from both streams
    enc = Encoder(rng, stem_width=4, widths=(4, 4, 4))
    s = enc(image_tensor(rng.uniform(size=(32, 32))))
    q = enc(image_tensor(rng.uniform(size=(32, 32))))
    T.backward(T.sum(s[0]))
    g_support = [p.grad.copy() for p in enc.parameters()[:2]]
    T.zero_grad(enc.parameters())
    s = enc(image_tensor(rng.uniform(size=(32, 32))))
    q = enc(image_tensor(rng.uniform(size=(32, 32))))
    T.backward(T.sum(s[0]) + T.sum(q[0]))
    for p, g in zip(enc.parameters()[:2], g_support):
        assert p.grad is not None and not np.array_equal(p.grad, g)


def test_projection_gradients(rng):
    proj = Projection(rng, (3, 5, 2), 4)
    feats = [Tensor(rng.standard_normal((c, 2, 2)), requires_grad=True) for c in (3, 5, 2)]
    f = lambda: T.sum(T.mul(proj(feats)[1], proj(feats)[1]))
    assert finite_diff_check(f, feats[1]) < 1e-6
    assert finite_diff_check(f, proj.convs[1].weight) < 1e-6


def test_downsample_single_pixel():
    m = np.zeros((32, 32))
    m[9, 17] = 1
    d = downsample_mask(m, 8).data
    assert d[1, 2] == 1 / 64
    assert d.sum() == 1 / 64


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mask_pyramid_preserves_mean(seed):
    m = np.random.default_rng(seed).integers(0, 2, (64, 64))
    for level in mask_pyramid(m):
        assert abs(level.data.mean() - m.mean()) < 1e-12
        assert 0.0 <= level.data.min() and level.data.max() <= 1.0


# --- correlation (mask aggregation) -------------------------------------------


def test_amm_single_key_copies_mask():
    out = amm_forward(Tensor(np.ones((3, 2))), Tensor(np.ones((1, 2))), Tensor([[0.7]]))
    np.testing.assert_allclose(out.data, 0.7, rtol=0, atol=1e-15)


def test_amm_zero_mask_gives_zero(rng):
    out = amm_forward(Tensor(rng.standard_normal((4, 3))), Tensor(rng.standard_normal((5, 3))), Tensor(np.zeros((5, 1))))
    assert np.all(out.data == 0.0)


def test_amm_two_by_two_hand_case():
    eye = Tensor(np.eye(2))
    out = amm_forward(eye, eye, Tensor([[1.0], [0.0]])).data[:, 0]
    s = 1 / (1 + np.exp(-1 / np.sqrt(2)))  # attention weight on the matching key
    np.testing.assert_allclose(out, [s, 1 - s], rtol=0, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_amm_matches_loop_oracle(nq, ns, d, seed):
    r = np.random.default_rng(seed)
    fq, fs, ms = r.standard_normal((nq, d)) * 3, r.standard_normal((ns, d)) * 3, r.uniform(size=(ns, 1))
    out = amm_forward(Tensor(fq), Tensor(fs), Tensor(ms)).data
    np.testing.assert_allclose(out, amm_loops(fq, fs, ms), rtol=0, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_amm_output_is_convex_combination(seed):
    r = np.random.default_rng(seed)
    ms = r.uniform(-2, 2, (6, 1))
    out = amm_forward(Tensor(r.standard_normal((5, 4)) * 10), Tensor(r.standard_normal((6, 4)) * 10), Tensor(ms)).data
    assert ms.min() - 1e-12 <= out.min() and out.max() <= ms.max() + 1e-12


def test_amm_support_permutation_invariance(rng):
    fq, fs, ms = rng.standard_normal((4, 3)), rng.standard_normal((6, 3)), rng.uniform(size=(6, 1))
    perm = rng.permutation(6)
    a = amm_forward(Tensor(fq), Tensor(fs), Tensor(ms)).data
    b = amm_forward(Tensor(fq), Tensor(fs[perm]), Tensor(ms[perm])).data
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


def test_self_matching_recovers_mask_with_sharp_features():
    # orthogonal, large-norm features: each location attends to itself
    f = np.eye(4) * 40.0
    m = np.array([[1.0], [0.0], [1.0], [0.0]])
    out = amm_forward(Tensor(f), Tensor(f), Tensor(m)).data
    np.testing.assert_allclose(out, m, atol=1e-6)


def test_amm_shape_errors():
    with pytest.raises(ShapeError):
        amm_forward(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))), Tensor(np.ones((2, 1))))
    with pytest.raises(ShapeError):
        amm_forward(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))), Tensor(np.ones((3, 1))))


def test_coarse_mask_gradients(rng):
    fq = Tensor(rng.standard_normal((3, 2, 2)), requires_grad=True)
    fs = Tensor(rng.standard_normal((3, 2, 2)), requires_grad=True)
    ms = Tensor(rng.uniform(size=(2, 2)))
    w = Tensor(rng.standard_normal((2, 2)))
    f = lambda: T.sum(T.mul(coarse_mask(fq, fs, ms), w))
    assert finite_diff_check(f, fq) < 1e-6
    assert finite_diff_check(f, fs) < 1e-6


def test_flatten_is_row_major(rng):
    a = rng.standard_normal((3, 2, 4))
    np.testing.assert_array_equal(flatten_locations(Tensor(a)).data, a.reshape(3, 8).T)


def test_average_supports(rng):
    encs = [SupportEncoding([Tensor(rng.standard_normal((2, 2, 2)))], [Tensor(rng.uniform(size=(2, 2)))]) for _ in range(3)]
    avg = average_supports(encs)
    np.testing.assert_allclose(avg.feats[0].data, np.mean([e.feats[0].data for e in encs], axis=0), atol=1e-15)
    np.testing.assert_allclose(avg.masks[0].data, np.mean([e.masks[0].data for e in encs], axis=0), atol=1e-15)
    assert average_supports(encs[:1]) is encs[0]
    with pytest.raises(ValueError):
        average_supports([])


def test_amm_saturated_two_by_two():
    f = Tensor(np.array([[10.0, 0.0], [0.0, 10.0]]))
    out = amm_forward(f, f, Tensor([[1.0], [0.0]])).data[:, 0]
    s = 1 / (1 + np.exp(-100 / np.sqrt(2)))
    np.testing.assert_allclose(out, [s, 1 - s], rtol=0, atol=1e-6)
    assert out[0] > 1 - 1e-12


def test_weight_perturbation_reaches_both_streams(rng):
    enc = Encoder(rng, stem_width=4, widths=(4, 4, 4))
    s_img, q_img = rng.uniform(size=(32, 32)), rng.uniform(size=(32, 32))
    before = [enc(image_tensor(x))[0].data for x in (s_img, q_img)]
    enc.stem[0].weight.data[0, 0, 1, 1] += 1e-3
    after = [enc(image_tensor(x))[0].data for x in (s_img, q_img)]
    assert all(not np.array_equal(a, b) for a, b in zip(before, after))
    same = [enc(image_tensor(s_img))[i].data for i in range(3)]
    np.testing.assert_array_equal(same[2], enc(image_tensor(s_img.copy()))[2].data)
