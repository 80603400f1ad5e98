import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import correlate

from vologan import tensor as T
from vologan.tensor import Tensor, finite_diff_check, no_grad, precision, read_vten, write_vten


def test_conv_all_ones():
    out = T.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 2, 2))), Tensor(np.zeros(1)))
    assert out.shape == (1, 1, 2, 2)
    np.testing.assert_array_equal(out.data, 4.0)


def test_conv_stride_subsamples_even_grid():
    x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
    out = T.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), stride=2)
    np.testing.assert_array_equal(out.data[0, 0], x[0, 0, ::2, ::2])


def test_conv_identity_1x1(rng):
    x = rng.standard_normal((2, 3, 5, 4)).astype(np.float32)
    w = np.eye(3, dtype=np.float32)[:, :, None, None]
    np.testing.assert_array_equal(T.conv2d(Tensor(x), Tensor(w)).data, x)


@pytest.mark.parametrize("stride", [1, 2, 3])
@pytest.mark.parametrize("mode", ["zeros", "reflect"])
def test_conv_matches_scipy_correlate(rng, stride, mode):
    x = rng.standard_normal((2, 3, 9, 7))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    pad = ((1, 2), (2, 1))
    with precision(64):
        out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=pad, padding_mode=mode).data
    xp = np.pad(x, ((0, 0), (0, 0)) + pad, mode="reflect" if mode == "reflect" else "constant")
    ref = np.stack([
        np.stack([correlate(xp[i], w[c], mode="valid")[0] for c in range(4)]) for i in range(2)
    ])[:, :, ::stride, ::stride] + b[:, None, None]
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_conv_shape_error_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(1, 2, 4, 4\).*\(3, 5, 3, 3\)"):
        T.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((3, 5, 3, 3))))


def test_conv_kernel_larger_than_input():
    with pytest.raises(ValueError, match="larger"):
        T.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))


def test_conv_gradients(rng):
    with precision(64):
        x = Tensor(rng.standard_normal((2, 3, 5, 5)), requires_grad=True)
        w = Tensor(rng.standard_normal((4, 3, 3, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal(4), requires_grad=True)
        c = Tensor(rng.standard_normal((2, 4, 5, 5)))
        err = finite_diff_check(lambda: (T.conv2d(x, w, b, padding=1) * c).sum(), [x, w, b])
    assert err < 1e-3


def test_depth_to_space_shapes():
    assert T.depth_to_space(Tensor(np.zeros((1, 4, 2, 2))), 2).shape == (1, 1, 4, 4)
    assert T.depth_to_space(Tensor(np.zeros((1, 9, 2, 2))), 3).shape == (1, 1, 6, 6)


def test_depth_to_space_index_formula(rng):
    n, c, h, w, r = 2, 2, 3, 2, 2
    x = rng.standard_normal((n, c * r * r, h, w)).astype(np.float32)
    out = T.depth_to_space(Tensor(x), r).data
    for co in range(c):
        for i in range(r):
            for j in range(r):
                np.testing.assert_array_equal(out[:, co, i::r, j::r], x[:, co * r * r + i * r + j])


def test_depth_to_space_rejects_bad_channels():
    with pytest.raises(ValueError):
        T.depth_to_space(Tensor(np.zeros((1, 6, 2, 2))), 2)


@settings(max_examples=100, deadline=None)
@given(c=st.integers(1, 3), r=st.integers(1, 3), h=st.integers(1, 4), w=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_depth_to_space_round_trip(c, r, h, w, seed):
    x = np.random.default_rng(seed).standard_normal((2, c * r * r, h, w)).astype(np.float32)
    back = T.space_to_depth(T.depth_to_space(Tensor(x), r), r).data
    np.testing.assert_array_equal(back, x)


def test_reflection_pad_row():
    x = Tensor(np.array([[[[1.0, 2.0, 3.0]]]]))
    out = T.reflection_pad(x, ((0, 0), (1, 1)))
    np.testing.assert_array_equal(out.data[0, 0, 0], [2, 1, 2, 3, 2])


def test_reflection_pad_zero_is_identity(rng):
    x = Tensor(rng.standard_normal((1, 2, 3, 3)))
    assert T.reflection_pad(x, 0) is x


def test_reflection_pad_too_wide():
    with pytest.raises(ValueError):
        T.reflection_pad(Tensor(np.zeros((1, 1, 3, 3))), 3)


@settings(max_examples=100, deadline=None)
@given(h=st.integers(2, 6), w=st.integers(2, 6), data=st.data())
def test_reflection_pad_introduces_no_new_values(h, w, data):
    t = data.draw(st.integers(0, h - 1))
    b = data.draw(st.integers(0, h - 1))
    l = data.draw(st.integers(0, w - 1))
    r = data.draw(st.integers(0, w - 1))
    x = np.random.default_rng(h * 31 + w).standard_normal((1, 2, h, w))
    out = T.reflection_pad(Tensor(x), ((t, b), (l, r))).data
    np.testing.assert_array_equal(out, np.pad(x, ((0, 0), (0, 0), (t, b), (l, r)), mode="reflect").astype(out.dtype))
    assert set(out.ravel().tolist()) <= set(x.astype(out.dtype).ravel().tolist())


def test_softmax_uniform_row():
    out = T.softmax_rows(Tensor(np.full((1, 1, 5), 3.0))).data
    np.testing.assert_allclose(out, 0.2)
    np.testing.assert_allclose(out.sum(), 1.0)


def test_mean_example():
    assert Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])).mean().item() == 2.5


def test_broadcast_mismatch_raises():
    with pytest.raises(ValueError):
        Tensor(np.zeros((2, 3))) + Tensor(np.zeros((4,)))


def test_clip_subgradient():
    x = Tensor(np.array([-1.0, 0.5, 2.0]), requires_grad=True)
    T.clip(x, 0.0, 1.0).sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_gradient_accumulates_over_paths():
    x = Tensor(np.array([2.0]), requires_grad=True)
    (x * 3.0 + T.square(x)).sum().backward()
    np.testing.assert_allclose(x.grad, [3.0 + 4.0])


def test_backward_order_and_release():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = (x * x).sum()
    y.backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0])
    with pytest.raises(RuntimeError):
        y.backward()


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2).sum()
    assert not y.requires_grad


def test_finite_diff_quadratic_exact():
    with precision(64):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        err = finite_diff_check(lambda: T.square(x).sum(), [x])
        np.testing.assert_allclose(x.grad, [2.0, 4.0])
    assert err < 1e-8


def test_finite_diff_constant():
    with precision(64):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        assert finite_diff_check(lambda: (x * 0.0).sum() + 5.0, [x]) < 1e-8


def test_finite_diff_non_finite_raises():
    with precision(64):
        x = Tensor(np.array([-1.0]), requires_grad=True)
        with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
            finite_diff_check(lambda: T.sqrt(x * np.inf).sum(), [x])


def test_matmul_batched_grads(rng):
    with precision(64):
        a = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((2, 4, 5)), requires_grad=True)
        c = Tensor(rng.standard_normal((2, 3, 5)))
        assert finite_diff_check(lambda: (T.matmul_batched(a, b) * c).sum(), [a, b]) < 1e-3


def test_vten_round_trip(tmp_path, rng):
    x = rng.standard_normal((3, 2, 5)).astype(np.float32)
    write_vten(tmp_path / "x.vten", x)
    raw = (tmp_path / "x.vten").read_bytes()
    assert raw[:4] == b"VTEN"
    assert struct.unpack("<4I", raw[4:20]) == (1, 3, 2, 5)
    y = read_vten(tmp_path / "x.vten")
    assert y.dtype == np.float32
    np.testing.assert_array_equal(y.reshape(x.shape), x)


def test_vten_bad_magic(tmp_path):
    (tmp_path / "bad.vten").write_bytes(b"XXXX" + bytes(16))
    with pytest.raises(ValueError):
        read_vten(tmp_path / "bad.vten")
