import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffem.errors import NonFiniteError, ShapeError
from diffem.ndcore import (
    AdamState,
    DenoiserParams,
    adam_update,
    denoiser_backward,
    denoiser_forward,
    init_params,
    linear_forward,
    load_params,
    save_params,
    silu,
    sinusoidal_embed,
)
from diffem.ndcore import _numpy_kernels, kernels


def loop_matmul_affine(w, b, x):
    rows, inner = x.shape
    out = np.zeros((rows, w.shape[1]))
    for i in range(rows):
        for j in range(w.shape[1]):
            acc = b[j]
            for k in range(inner):
                acc += x[i, k] * w[k, j]
            out[i, j] = acc
    return out


class TestLinear:
    def test_identity(self):
        x = np.random.default_rng(0).normal(size=(5, 3))
        np.testing.assert_array_equal(linear_forward(np.eye(3), np.zeros(3), x), x)

    def test_scalar_affine(self):
        assert linear_forward([[2.0]], [1.0], [[3.0]]).tolist() == [[7.0]]

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(1)
        w, b, x = rng.normal(size=(3, 4)), rng.normal(size=4), rng.normal(size=(2, 3))
        np.testing.assert_allclose(linear_forward(w, b, x), loop_matmul_affine(w, b, x), rtol=1e-14, atol=1e-14)

    def test_shape_mismatch_reports_dims(self):
        with pytest.raises(ShapeError, match="3 columns.*expects 4"):
            linear_forward(np.ones((4, 2)), np.zeros(2), np.ones((1, 3)))


class TestSilu:
    def test_zero(self):
        assert silu(np.zeros((1, 1)))[0, 0] == 0.0

    def test_saturation(self):
        assert abs(silu(np.array([[20.0]]))[0, 0] - 20.0) < 1e-6

    def test_one(self):
        assert silu(np.array([[1.0]]))[0, 0] == pytest.approx(1.0 / (1.0 + math.exp(-1.0)), abs=1e-15)
        assert silu(np.array([[1.0]]))[0, 0] == pytest.approx(0.731059, abs=1e-6)

    def test_extreme_inputs_stay_finite(self):
        y = silu(np.array([[-1000.0, 1000.0]]))
        assert y[0, 0] == 0.0 and y[0, 1] == 1000.0


class TestEmbedding:
    def test_zero_time(self):
        e = sinusoidal_embed(0.0, 8)
        np.testing.assert_array_equal(e[:4], 0.0)
        np.testing.assert_array_equal(e[4:], 1.0)

    @given(st.floats(-100, 100, allow_nan=False))
    def test_bounded(self, t):
        e = sinusoidal_embed(t, 16)
        assert np.all(np.abs(e) <= 1.0)

    def test_distinct_times_differ(self):
        assert np.linalg.norm(sinusoidal_embed(1.0, 16) - sinusoidal_embed(2.0, 16)) > 0

    def test_frequency_ladder(self):
        e = sinusoidal_embed(3.0, 8)
        freqs = np.exp(-np.log(10000.0) * np.arange(4) / 4)
        np.testing.assert_allclose(e, np.concatenate([np.sin(3 * freqs), np.cos(3 * freqs)]))

    def test_odd_dim_rejected(self):
        with pytest.raises(ShapeError):
            sinusoidal_embed(1.0, 7)

    def test_per_row_times(self):
        e = sinusoidal_embed(np.array([0.5, 1.5]), 4)
        assert e.shape == (2, 4)
        np.testing.assert_array_equal(e[1], sinusoidal_embed(1.5, 4))


def small_net(d=3, h=8, seed=0):
    return init_params(d, h, np.random.default_rng(seed))


class TestDenoiserForward:
    def test_shape(self):
        p = small_net(5, 16)
        x = np.random.default_rng(2).normal(size=(7, 5))
        assert denoiser_forward(p, x, 0.7).shape == (7, 5)

    def test_deterministic(self):
        p = small_net()
        x = np.random.default_rng(3).normal(size=(4, 3))
        a = denoiser_forward(p, x, 1.3)
        b = denoiser_forward(p, x, 1.3)
        assert a.tobytes() == b.tobytes()

    def test_matches_hand_composition(self):
        p = small_net(2, 4, seed=5)
        # nonzero biases so every term is exercised
        rng = np.random.default_rng(6)
        p = p.map(lambda a: a + 0.1 * rng.normal(size=a.shape))
        x = rng.normal(size=(3, 2))
        t = 0.9
        h = linear_forward(p.w_in, p.b_in, x) + sinusoidal_embed(t, 4)
        h = silu(linear_forward(p.w_1, p.b_1, h))
        h = silu(linear_forward(p.w_2, p.b_2, h))
        h = silu(linear_forward(p.w_3, p.b_3, h))
        expected = linear_forward(p.w_out, p.b_out, h)
        np.testing.assert_allclose(denoiser_forward(p, x, t), expected, rtol=1e-12, atol=1e-14)

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            denoiser_forward(small_net(3, 8), np.ones((2, 4)), 1.0)

    def test_layer_shapes_chain(self):
        p = small_net(3, 6)
        assert p.w_1.shape == (6, 12) and p.w_2.shape == (12, 12) and p.w_3.shape == (12, 6)
        assert p.w_out.shape == (6, 3) and p.embed_dim == 6

    def test_init_bounds(self):
        p = small_net(3, 8)
        assert np.all(np.abs(p.w_2) <= 1 / math.sqrt(16))
        assert np.all(p.b_1 == 0)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 8), st.integers(1, 5))
    def test_shape_preserved(self, d, half_h, n):
        p = small_net(d, 2 * half_h)
        assert denoiser_forward(p, np.zeros((n, d)), 2.0).shape == (n, d)


def finite_difference_grads(p: DenoiserParams, scalar_fn, step=1e-5):
    out = {}
    for name, arr in p.arrays().items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            plus, minus = arr.copy(), arr.copy()
            plus[idx] += step
            minus[idx] -= step
            fp = scalar_fn(p.with_arrays(**{name: plus}))
            fm = scalar_fn(p.with_arrays(**{name: minus}))
            g[idx] = (fp - fm) / (2 * step)
        out[name] = g
    return out


def max_rel_err(a, b, floor=1e-8):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


class TestDenoiserBackward:
    def test_zero_upstream(self):
        p = small_net()
        x = np.ones((2, 3))
        g = denoiser_backward(p, x, 1.0, np.zeros((2, 3)))
        assert all(np.all(a == 0) for a in g.arrays().values())

    def test_linear_in_upstream(self):
        p = small_net()
        rng = np.random.default_rng(4)
        x, up = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        g1 = denoiser_backward(p, x, 0.5, up)
        g2 = denoiser_backward(p, x, 0.5, 2 * up)
        for a, b in zip(g1.arrays().values(), g2.arrays().values()):
            np.testing.assert_allclose(b, 2 * a, rtol=1e-14, atol=1e-300)

    def test_finite_differences(self):
        rng = np.random.default_rng(7)
        p = small_net(3, 8, seed=8).map(lambda a: a + 0.05 * rng.normal(size=a.shape))
        x = rng.normal(size=(4, 3))
        t = rng.uniform(0.1, 3.0, size=4)
        up = rng.normal(size=(4, 3))
        analytic = denoiser_backward(p, x, t, up).arrays()
        fd = finite_difference_grads(p, lambda q: float(np.sum(up * denoiser_forward(q, x, t))))
        for name in analytic:
            assert max_rel_err(analytic[name], fd[name]) < 1e-4, name

    def test_upstream_shape_checked(self):
        with pytest.raises(ShapeError):
            denoiser_backward(small_net(), np.ones((2, 3)), 1.0, np.ones((3, 3)))


def scalar_params(value):
    """A 1x2 network used as a bag of parameters for Adam tests."""
    p = init_params(1, 2, np.random.default_rng(0))
    return p.map(lambda a: np.full(a.shape, value))


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = scalar_params(0.5)
        zero = p.map(np.zeros_like)
        new, state = adam_update(p, zero, AdamState.create(p, lr=0.1))
        for a, b in zip(p.arrays().values(), new.arrays().values()):
            np.testing.assert_array_equal(a, b)
        assert state.step == 1

    def test_first_step_hand_computed(self):
        p = scalar_params(0.0)
        ones = p.map(np.ones_like)
        new, _ = adam_update(p, ones, AdamState.create(p, lr=0.1))
        # m_hat = 1, v_hat = 1 after bias correction
        expected = -0.1 * 1.0 / (1.0 + 1e-8)
        for a in new.arrays().values():
            np.testing.assert_allclose(a, expected, rtol=1e-15)

    def test_quadratic_convergence(self):
        p = scalar_params(0.0)
        state = AdamState.create(p, lr=0.1)
        for _ in range(200):
            grads = p.map(lambda w: 2.0 * (w - 3.0))
            p, state = adam_update(p, grads, state)
        assert abs(p.w_in[0, 0] - 3.0) < 0.1
        assert state.step == 200

    def test_non_finite_gradient_rejected(self):
        p = scalar_params(0.0)
        g = p.map(np.zeros_like)
        bad = g.w_1.copy()
        bad[0, 0] = np.nan
        with pytest.raises(NonFiniteError, match="w_1"):
            adam_update(p, g.with_arrays(w_1=bad), AdamState.create(p))

    def test_inputs_not_mutated(self):
        p = scalar_params(1.0)
        before = p.digest()
        adam_update(p, p.map(np.ones_like), AdamState.create(p))
        assert p.digest() == before


def test_params_are_read_only():
    p = small_net()
    with pytest.raises(ValueError):
        p.w_in[0, 0] = 1.0


def test_checkpoint_round_trip(tmp_path):
    p = small_net(4, 6, seed=11)
    path = tmp_path / "p.npz"
    save_params(p, path)
    q = load_params(path)
    assert q.digest() == p.digest()
    with np.load(path) as data:
        assert int(data["format_version"]) == 1
        assert int(data["hidden_dim"]) == 6


class TestKernelBackends:
    """The compiled kernels and the numpy fallback agree."""

    def test_backend_selected(self):
        assert kernels.BACKEND in ("cython", "numpy")

    def test_silu_agree(self):
        x = np.random.default_rng(0).normal(scale=10, size=(50, 7))
        y1, s1 = kernels.silu_forward(x)
        y2, s2 = _numpy_kernels.silu_forward(x)
        np.testing.assert_allclose(y1, y2, rtol=1e-14, atol=1e-300)
        g = np.random.default_rng(1).normal(size=x.shape)
        np.testing.assert_allclose(kernels.silu_backward(x, s1, g), _numpy_kernels.silu_backward(x, s2, g),
                                   rtol=1e-13, atol=1e-300)

    def test_adam_agree(self):
        rng = np.random.default_rng(2)
        arrs = [rng.normal(size=(5, 4)) for _ in range(3)]
        v = np.abs(rng.normal(size=(5, 4)))
        a = kernels.adam_step(arrs[0], arrs[1], arrs[2], v, 0.01, 0.9, 0.999, 1e-8, 0.5, 0.3)
        b = _numpy_kernels.adam_step(arrs[0], arrs[1], arrs[2], v, 0.01, 0.9, 0.999, 1e-8, 0.5, 0.3)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=1e-14)

    def test_inpaint_update_agree(self):
        rng = np.random.default_rng(3)
        x, s, z, o, e = (rng.normal(size=(6, 3)) for _ in range(5))
        m = (rng.random((6, 3)) < 0.5).astype(float)
        a = kernels.inpaint_update(x, s, z, o, e, m, 2.0, 1.5)
        b = _numpy_kernels.inpaint_update(x, s, z, o, e, m, 2.0, 1.5)
        np.testing.assert_allclose(a, b, rtol=1e-15)
        np.testing.assert_array_equal(a[m == 0], (o + 1.5 * e)[m == 0])

    def test_all_finite(self):
        assert kernels.all_finite(np.ones(3))
        assert not kernels.all_finite(np.array([1.0, np.inf]))
