import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcil.neural import (AdamState, Mlp, adam_step, backward, forward, load_mlp, n_params_for,
                         polyak_update, save_mlp)
from gradcheck import numeric_grad, relative_error


def net(sizes, seed=0):
    return Mlp(sizes, rng=np.random.default_rng(seed))


class TestShapes:
    def test_param_count(self):
        assert n_params_for((3, 4, 2)) == 3 * 4 + 4 + 4 * 2 + 2
        assert net((3, 4, 2)).n_params == 26

    def test_bad_sizes(self):
        with pytest.raises(ValueError):
            Mlp((3,))
        with pytest.raises(ValueError):
            Mlp((3, 0, 1))
        with pytest.raises(ValueError):
            Mlp((3, 2), params=np.zeros(5))

    def test_input_width_checked(self):
        with pytest.raises(ValueError):
            net((3, 4, 1)).forward(np.zeros((2, 4)))

    def test_single_row(self):
        m = net((3, 5, 2))
        x = np.arange(3.0)
        assert np.allclose(m.forward(x), m.forward(x[None])[0])

    def test_zero_init(self):
        m = Mlp((3, 4, 2))
        assert np.all(m.params == 0)
        assert np.all(m.forward(np.ones((2, 3))) == 0)


class TestForwardOracle:
    def test_against_plain_numpy(self):
        m = net((4, 6, 5, 2), seed=1)
        x = np.random.default_rng(2).standard_normal((7, 4))
        h = x
        for i, (w, b) in enumerate(zip(m.weights, m.biases)):
            h = h @ w + b
            if i < 2:
                h = np.maximum(h, 0)
        assert np.allclose(forward(m, x), h, atol=1e-14)

    def test_views_share_storage(self):
        m = net((2, 3, 1))
        m.weights[0][0, 0] = 42.0
        assert m.params[0] == 42.0


@pytest.mark.parametrize("sizes", [(3, 1), (8, 16, 16, 2), (9, 16, 16, 1), (5, 7, 3, 4, 2)])
def test_backward_matches_finite_differences(sizes):
    m = net(sizes, seed=3)
    rng = np.random.default_rng(4)
    x = rng.standard_normal((6, sizes[0]))
    dy = rng.standard_normal((6, sizes[-1]))
    grad, dx = backward(m, x, dy)
    num = numeric_grad(lambda: float(np.sum(dy * m.forward(x))), m.params)
    assert np.max(relative_error(grad, num)) < 1e-4
    xf = x.copy()
    num_x = numeric_grad(lambda: float(np.sum(dy * m.forward(xf))), xf.reshape(-1))
    assert np.max(relative_error(dx.reshape(-1), num_x)) < 1e-4


def test_backward_accumulates_into_buffer():
    m = net((3, 4, 2))
    x = np.ones((2, 3))
    dy = np.ones((2, 2))
    g1, _ = backward(m, x, dy)
    buf = g1.copy()
    _, cache = m.forward_cache(x)
    m.backward_cache(cache, dy, grad_out=buf)
    assert np.allclose(buf, 2 * g1)


class TestAdam:
    def test_first_step_moves_by_lr(self):
        p = np.array([1.0, -2.0, 3.0])
        st_ = AdamState.for_params(3, lr=0.1)
        adam_step(st_, p, np.array([0.5, -4.0, 1e-3]))
        # bias-corrected first step is lr * sign(g)
        assert np.allclose(p, [0.9, -1.9, 2.9], atol=1e-6)

    def test_matches_textbook(self):
        rng = np.random.default_rng(0)
        p = rng.standard_normal(5)
        ref = p.copy()
        st_ = AdamState.for_params(5, lr=0.01)
        m = np.zeros(5)
        v = np.zeros(5)
        for t in range(1, 20):
            g = rng.standard_normal(5)
            adam_step(st_, p, g)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            mh = m / (1 - 0.9 ** t)
            vh = v / (1 - 0.999 ** t)
            ref -= 0.01 * mh / (np.sqrt(vh) + 1e-8)
        assert np.allclose(p, ref, rtol=1e-10, atol=1e-12)

    def test_minimises_quadratic(self):
        p = np.array([5.0, -3.0])
        st_ = AdamState.for_params(2, lr=0.05)
        for _ in range(2000):
            adam_step(st_, p, 2 * p)
        assert np.all(np.abs(p) < 1e-2)


class TestPolyak:
    @given(st.floats(0, 1))
    def test_convex_combination(self, tau):
        a, b = net((2, 3, 1), 0), net((2, 3, 1), 1)
        expected = (1 - tau) * a.params + tau * b.params
        polyak_update(a, b, tau)
        assert np.allclose(a.params, expected)

    def test_tau_one_copies(self):
        a, b = net((2, 3, 1), 0), net((2, 3, 1), 1)
        polyak_update(a, b, 1.0)
        assert np.array_equal(a.params, b.params)

    def test_rejects(self):
        a, b = net((2, 3, 1)), net((2, 4, 1))
        with pytest.raises(ValueError):
            polyak_update(a, b, 0.5)
        with pytest.raises(ValueError):
            polyak_update(a, a.clone(), 1.5)


class TestCheckpoint:
    def test_bit_exact(self, tmp_path):
        m = net((4, 8, 2), seed=9)
        save_mlp(m, tmp_path / "m.npz", seed=9, step=17)
        back, header = load_mlp(tmp_path / "m.npz")
        assert np.array_equal(back.params, m.params)
        assert back.sizes == m.sizes
        assert header["seed"] == 9 and header["step"] == 17

    def test_rejects_non_finite(self, tmp_path):
        m = net((2, 2, 1))
        m.params[0] = np.nan
        save_mlp(m, tmp_path / "m.npz")
        with pytest.raises(ValueError, match="non-finite"):
            load_mlp(tmp_path / "m.npz")

    def test_rejects_wrong_format(self, tmp_path):
        with open(tmp_path / "x.npz", "wb") as fh:
            np.savez(fh, header=np.array(json.dumps({"format": "other"})), params=np.zeros(3))
        with pytest.raises(ValueError, match="format"):
            load_mlp(tmp_path / "x.npz")

    def test_clone_is_independent(self):
        m = net((2, 3, 1))
        c = m.clone()
        c.params[:] = 0
        assert np.any(m.params != 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(1, 6), st.integers(1, 4), st.integers(0, 1000))
def test_linearity_in_upstream_gradient(n_in, hidden, batch, seed):
    m = net((n_in, hidden, 2), seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, n_in))
    d1 = rng.standard_normal((batch, 2))
    d2 = rng.standard_normal((batch, 2))
    g1, _ = backward(m, x, d1)
    g2, _ = backward(m, x, d2)
    g12, _ = backward(m, x, d1 + d2)
    assert np.allclose(g12, g1 + g2, atol=1e-10)
