import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acnet import tensor as T
from acnet.tensor import ConvKernel, ShapeError, UnsupportedKernelError

from oracles import central_difference, max_rel_error, naive_conv2d


def kernel(weight, bias=None):
    weight = np.asarray(weight, dtype=np.float64)
    if bias is None:
        bias = np.zeros(weight.shape[0])
    return ConvKernel(weight, np.asarray(bias, dtype=np.float64))


# -- conv2d ------------------------------------------------------------------

def test_identity_kernel(rng):
    x = rng.standard_normal((1, 1, 3, 3))
    out = T.conv2d(x, kernel(np.ones((1, 1, 1, 1))))
    np.testing.assert_array_equal(out, x)


def test_all_ones_box():
    # frozen from naive_conv2d
    out = T.conv2d(np.ones((1, 1, 3, 3)), kernel(np.ones((1, 1, 3, 3))))
    np.testing.assert_allclose(out[0, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


def test_vertical_ramp_3x1():
    x = np.arange(4.0).reshape(1, 1, 4, 1)
    k = kernel(np.array([-1.0, 0.0, 1.0]).reshape(1, 1, 3, 1))
    assert k.pad == (1, 0)
    np.testing.assert_allclose(T.conv2d(x, k)[0, 0, :, 0], [1, 2, 2, -2])


@pytest.mark.parametrize("kh,kw", [(1, 1), (1, 3), (3, 1), (3, 3)])
def test_matches_naive_oracle(rng, kh, kw):
    x = rng.standard_normal((2, 3, 5, 4))
    w = rng.standard_normal((4, 3, kh, kw))
    b = rng.standard_normal(4)
    np.testing.assert_allclose(T.conv2d_raw(x, w, b), naive_conv2d(x, w, b), atol=1e-12)


def test_float32_stays_float32(rng):
    x = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
    k = ConvKernel(np.ones((3, 2, 3, 3), np.float32), np.zeros(3, np.float32))
    assert T.conv2d(x, k).dtype == np.float32


def test_channel_mismatch():
    with pytest.raises(ShapeError):
        T.conv2d(np.zeros((1, 2, 4, 4)), kernel(np.zeros((1, 3, 3, 3))))


@pytest.mark.parametrize("shape", [(1, 1, 5, 5), (1, 1, 2, 3), (1, 1, 3, 2)])
def test_unsupported_kernel(shape):
    with pytest.raises(UnsupportedKernelError):
        ConvKernel(np.zeros(shape), np.zeros(1))
    with pytest.raises(UnsupportedKernelError):
        T.conv2d_raw(np.zeros((1, 1, 6, 6)), np.zeros(shape), np.zeros(1))


@settings(max_examples=25, deadline=None)
@given(
    kshape=st.sampled_from([(1, 3), (3, 1), (3, 3)]),
    n=st.integers(1, 2), c=st.integers(1, 4), o=st.integers(1, 4),
    h=st.integers(1, 9), w=st.integers(1, 9), seed=st.integers(0, 2**16),
)
def test_same_padding_preserves_spatial_dims(kshape, n, c, o, h, w, seed):
    r = np.random.default_rng(seed)
    out = T.conv2d_raw(r.standard_normal((n, c, h, w)), r.standard_normal((o, c) + kshape), np.zeros(o))
    assert out.shape == (n, o, h, w)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**16), kshape=st.sampled_from([(1, 1), (1, 3), (3, 1), (3, 3)]))
def test_linearity_float32(seed, kshape):
    r = np.random.default_rng(seed)
    a = r.standard_normal((1, 3, 6, 5)).astype(np.float32)
    b = r.standard_normal((1, 3, 6, 5)).astype(np.float32)
    w = r.standard_normal((2, 3) + kshape).astype(np.float32)
    bias = r.standard_normal(2).astype(np.float32)
    lhs = T.conv2d_raw(a + b, w, bias)
    rhs = T.conv2d_raw(a, w, bias) + T.conv2d_raw(b, w, bias) - bias[None, :, None, None]
    np.testing.assert_allclose(lhs, rhs, atol=1e-5)


# -- conv2d_backward ---------------------------------------------------------

def test_backward_zero_grad(rng):
    x = rng.standard_normal((1, 2, 4, 4))
    k = kernel(rng.standard_normal((3, 2, 3, 3)))
    gx, gw, gb = T.conv2d_backward(x, k, np.zeros((1, 3, 4, 4)))
    assert not gx.any() and not gw.any() and not gb.any()


def test_backward_identity_adjoint(rng):
    x = rng.standard_normal((1, 1, 3, 3))
    g = rng.standard_normal((1, 1, 3, 3))
    gx, _, _ = T.conv2d_backward(x, kernel(np.ones((1, 1, 1, 1))), g)
    np.testing.assert_array_equal(gx, g)


@pytest.mark.parametrize("kshape", [(3, 3), (3, 1), (1, 3), (1, 1)])
def test_backward_finite_differences(rng, kshape):
    x = rng.standard_normal((1, 2, 4, 4))
    k = kernel(rng.standard_normal((3, 2) + kshape), rng.standard_normal(3))
    g = rng.standard_normal((1, 3, 4, 4))

    def f():
        return float(np.sum(T.conv2d(x, k) * g))

    gx, gw, gb = T.conv2d_backward(x, k, g)
    assert max_rel_error(gx, central_difference(f, x)) < 1e-4
    assert max_rel_error(gw, central_difference(f, k.weight)) < 1e-4
    assert max_rel_error(gb, central_difference(f, k.bias)) < 1e-4


def test_backward_bias_is_grad_sum(rng):
    g = rng.standard_normal((2, 3, 4, 5))
    _, _, gb = T.conv2d_backward(rng.standard_normal((2, 2, 4, 5)), kernel(np.zeros((3, 2, 3, 3))), g)
    np.testing.assert_allclose(gb, g.sum(axis=(0, 2, 3)))


def test_backward_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        T.conv2d_backward(np.zeros((1, 2, 4, 4)), kernel(np.zeros((3, 2, 3, 3))), np.zeros((1, 3, 4, 5)))


@settings(max_examples=15, deadline=None)
@given(
    seed=st.integers(0, 2**16), kshape=st.sampled_from([(1, 3), (3, 1), (3, 3)]),
    n=st.integers(1, 2), c=st.integers(1, 3), o=st.integers(1, 3), h=st.integers(1, 5), w=st.integers(1, 5),
)
def test_backward_property(seed, kshape, n, c, o, h, w):
    r = np.random.default_rng(seed)
    x = r.standard_normal((n, c, h, w))
    k = kernel(r.standard_normal((o, c) + kshape), r.standard_normal(o))
    g = r.standard_normal((n, o, h, w))

    def f():
        return float(np.sum(T.conv2d(x, k) * g))

    gx, gw, gb = T.conv2d_backward(x, k, g)
    for analytic, arr in ((gx, x), (gw, k.weight), (gb, k.bias)):
        assert max_rel_error(analytic, central_difference(f, arr), floor=1e-6) < 1e-5


# -- relu / add --------------------------------------------------------------

def test_relu_cases():
    t = np.array([-1.0, 0.0, 2.0]).reshape(1, 1, 1, 3)
    np.testing.assert_array_equal(T.relu(t).ravel(), [0, 0, 2])
    g = np.full_like(t, 5.0)
    np.testing.assert_array_equal(T.relu_backward(t, g).ravel(), [0, 0, 5])


def test_relu_nonnegative_unchanged(rng):
    t = np.abs(rng.standard_normal((1, 2, 3, 3)))
    np.testing.assert_array_equal(T.relu(t), t)


def test_relu_backward_finite_differences(rng):
    t = rng.standard_normal((1, 2, 3, 3))
    t[np.abs(t) < 1e-3] = 0.5
    g = rng.standard_normal(t.shape)
    numeric = central_difference(lambda: float(np.sum(T.relu(t) * g)), t)
    assert max_rel_error(T.relu_backward(t, g), numeric, floor=1e-6) < 1e-5


def test_add(rng):
    a = rng.standard_normal((1, 2, 3, 3))
    b = rng.standard_normal((1, 2, 3, 3))
    np.testing.assert_array_equal(T.add(a, np.zeros_like(a)), a)
    np.testing.assert_array_equal(T.add(a, -a), np.zeros_like(a))
    np.testing.assert_array_equal(T.add(a, b), T.add(b, a))
    with pytest.raises(ShapeError):
        T.add(a, np.zeros((1, 2, 3, 4)))


# -- pixel shuffle -----------------------------------------------------------

def test_shuffle_r1_identity(rng):
    t = rng.standard_normal((2, 3, 4, 5))
    np.testing.assert_array_equal(T.pixel_shuffle(t, 1), t)
    np.testing.assert_array_equal(T.pixel_unshuffle(t, 1), t)


def test_shuffle_ordering():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    t = np.array([a, b, c, d]).reshape(1, 4, 1, 1)
    out = T.pixel_shuffle(t, 2)
    assert out.shape == (1, 1, 2, 2)
    np.testing.assert_array_equal(out[0, 0], [[a, b], [c, d]])
    np.testing.assert_array_equal(T.pixel_unshuffle(out, 2), t)


def test_shuffle_index_formula(rng):
    r = 3
    t = rng.standard_normal((2, 2 * r * r, 3, 4))
    out = T.pixel_shuffle(t, r)
    for c in range(2):
        for y in range(3):
            for x in range(4):
                for i in range(r):
                    for j in range(r):
                        assert out[1, c, y * r + i, x * r + j] == t[1, c * r * r + i * r + j, y, x]


@pytest.mark.parametrize("r", [2, 3])
def test_shuffle_round_trip(rng, r):
    t = rng.standard_normal((2, 2 * r * r, 3, 5))
    np.testing.assert_array_equal(T.pixel_unshuffle(T.pixel_shuffle(t, r), r), t)
    u = rng.standard_normal((2, 2, 3 * r, 5 * r))
    np.testing.assert_array_equal(T.pixel_shuffle(T.pixel_unshuffle(u, r), r), u)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**16), r=st.sampled_from([2, 3]), c=st.integers(1, 3))
def test_shuffle_preserves_multiset(seed, r, c):
    t = np.random.default_rng(seed).standard_normal((1, c * r * r, 2, 3))
    np.testing.assert_array_equal(np.sort(T.pixel_shuffle(t, r).ravel()), np.sort(t.ravel()))


def test_shuffle_errors():
    with pytest.raises(ShapeError):
        T.pixel_shuffle(np.zeros((1, 3, 2, 2)), 2)
    with pytest.raises(ShapeError):
        T.pixel_unshuffle(np.zeros((1, 1, 3, 4)), 2)


def test_unshuffle_is_adjoint_of_shuffle(rng):
    t = rng.standard_normal((1, 8, 3, 3))
    g = rng.standard_normal((1, 2, 6, 6))
    assert np.isclose(np.sum(T.pixel_shuffle(t, 2) * g), np.sum(t * T.pixel_unshuffle(g, 2)))


def test_debug_mode_flags_non_finite():
    T.set_debug(True)
    try:
        with pytest.raises(T.NonFiniteError):
            T.conv2d_raw(np.full((1, 1, 2, 2), np.inf), np.ones((1, 1, 1, 1)), np.zeros(1))
    finally:
        T.set_debug(False)
