"""Network step/readout/head semantics and exactness of the manual BPTT."""

import numpy as np
import pytest

from rnnmimic import rnn
from rnnmimic.errors import DimensionError, ParameterError, StateError
from rnnmimic.numerics import RngStream


def random_params(seed, h=5, d=3):
    stream = RngStream(seed, 0)
    return rnn.init_params(h, d, stream)


class TestInit:
    def test_bounds(self):
        p = rnn.init_params(4, 2, RngStream(0, 0))
        bound = 0.5
        for m in (p.w_hh, p.w_ih, p.a):
            assert np.all(np.abs(m) < bound)

    def test_deterministic(self):
        p1 = rnn.init_params(6, 3, RngStream(1, 7))
        p2 = rnn.init_params(6, 3, RngStream(1, 7))
        np.testing.assert_array_equal(p1.w_hh, p2.w_hh)
        np.testing.assert_array_equal(p1.w_ih, p2.w_ih)
        np.testing.assert_array_equal(p1.a, p2.a)

    def test_pooled_mean_near_zero(self):
        p = rnn.init_params(100, 100, RngStream(2, 0))
        draws = p.w_ih.ravel()
        bound = 0.1
        sd_mean = bound / np.sqrt(3 * draws.size)
        assert abs(draws.mean()) < 3 * sd_mean

    def test_size_validation(self):
        with pytest.raises(ParameterError):
            rnn.init_params(0, 3, RngStream(0, 0))


class TestStep:
    def test_origin(self):
        p = random_params(0)
        z, h = rnn.step(p, np.zeros(5), np.zeros(3))
        np.testing.assert_array_equal(h, np.zeros(5))

    def test_identity_recurrence(self):
        p = rnn.RnnParams(w_hh=np.eye(4), w_ih=np.zeros((4, 2)), a=np.zeros((3, 4)))
        h_prev = np.array([0.3, 0.0, 1.5, 0.2])
        _, h = rnn.step(p, h_prev, np.zeros(2))
        np.testing.assert_array_equal(h, h_prev)

    def test_dot_product_oracle(self):
        p = random_params(3)
        rng = np.random.default_rng(3)
        h_prev = rng.standard_normal(5)
        x = rng.standard_normal(3)
        z, h = rnn.step(p, h_prev, x)
        for i in range(5):
            zi = sum(h_prev[j] * p.w_hh[i, j] for j in range(5))
            zi += sum(x[k] * p.w_ih[i, k] for k in range(3))
            np.testing.assert_allclose(z[i], zi, atol=1e-12)
            np.testing.assert_allclose(h[i], max(zi, 0.0), atol=1e-12)

    def test_width_mismatch(self):
        p = random_params(0)
        with pytest.raises(DimensionError):
            rnn.step(p, np.zeros(4), np.zeros(3))
        with pytest.raises(DimensionError):
            rnn.step(p, np.zeros(5), np.zeros(2))


class TestReadout:
    def test_zero_state(self):
        p = random_params(1)
        np.testing.assert_array_equal(rnn.readout(p, np.zeros(5)), np.zeros(3))

    def test_one_hot_rows_copy_coordinates(self):
        a = np.zeros((3, 5))
        a[0, 2] = a[1, 0] = a[2, 4] = 1.0
        p = rnn.RnnParams(w_hh=np.zeros((5, 5)), w_ih=np.zeros((5, 1)), a=a)
        h = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        np.testing.assert_array_equal(rnn.readout(p, h), [3.0, 1.0, 5.0])

    def test_dot_product_oracle(self):
        p = random_params(2)
        h = np.random.default_rng(9).standard_normal(5)
        y = rnn.readout(p, h)
        for k in range(3):
            np.testing.assert_allclose(y[k], float(p.a[k] @ h), atol=1e-12)


class TestGumbelSoftmax:
    def test_symmetric(self):
        out = rnn.gumbel_softmax(np.zeros(3), 1.0, np.zeros(3))
        np.testing.assert_allclose(out, np.full(3, 1 / 3), atol=1e-15)

    def test_hard_limit(self):
        y = np.array([0.3, -0.2, 0.1])
        g = np.array([0.05, 0.6, -0.3])
        out = rnn.gumbel_softmax(y, 1e-6, g)
        hot = np.zeros(3)
        hot[np.argmax(y + g)] = 1.0
        np.testing.assert_allclose(out, hot, atol=1e-6)

    def test_gumbel_max_frequency(self):
        logits = np.array([0.5, -0.4, 1.1])
        stream = RngStream(5, 0)
        g = stream.gumbel((100_000, 3))
        counts = np.bincount(np.argmax(logits + g, axis=1), minlength=3)
        target = np.exp(logits) / np.exp(logits).sum()
        np.testing.assert_allclose(counts / g.shape[0], target, atol=0.01)

    def test_simplex_output(self):
        rng = np.random.default_rng(0)
        out = rnn.gumbel_softmax(rng.standard_normal((20, 3)), 0.7,
                                 rng.standard_normal((20, 3)))
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(out > 0)

    def test_temperature_validation(self):
        with pytest.raises(ParameterError):
            rnn.gumbel_softmax(np.zeros(3), 0.0, np.zeros(3))


class TestRollout:
    def test_zero_everything(self):
        p = random_params(4)
        ro = rnn.rollout(p, 10)
        np.testing.assert_array_equal(ro.h, np.zeros((10, 5)))
        np.testing.assert_array_equal(ro.logits, np.zeros((10, 3)))

    def test_length_one_equals_step(self):
        p = random_params(5)
        rng = np.random.default_rng(5)
        x = rng.standard_normal((1, 3))
        h0 = np.abs(rng.standard_normal(5))
        ro = rnn.rollout(p, 1, inputs=x, h0=h0)
        z, h = rnn.step(p, h0, x[0])
        np.testing.assert_allclose(ro.z[0], z, atol=1e-12)
        np.testing.assert_allclose(ro.h[0], h, atol=1e-12)

    def test_deterministic_given_streams(self):
        p = random_params(6)
        r1 = rnn.rollout(p, 20, input_stream=RngStream(6, 1),
                         gumbel_stream=RngStream(6, 2))
        r2 = rnn.rollout(p, 20, input_stream=RngStream(6, 1),
                         gumbel_stream=RngStream(6, 2))
        np.testing.assert_array_equal(r1.h, r2.h)
        np.testing.assert_array_equal(r1.soft, r2.soft)

    def test_relu_gating_invariant(self):
        p = random_params(7)
        ro = rnn.rollout(p, 50, input_stream=RngStream(7, 1))
        masked = ro.h * (ro.z <= 0.0)
        assert np.all(masked == 0.0)

    def test_soft_rows_sum_to_one(self):
        p = random_params(8)
        ro = rnn.rollout(p, 30, input_stream=RngStream(8, 1),
                         gumbel_stream=RngStream(8, 2))
        np.testing.assert_allclose(ro.soft.sum(axis=1), 1.0, atol=1e-12)

    def test_input_path_homogeneity(self):
        # with A = 0 and a single step, doubling W_ih and h0 doubles z exactly
        p = random_params(9)
        p0 = rnn.RnnParams(w_hh=p.w_hh, w_ih=p.w_ih, a=np.zeros((3, 5)))
        p2 = rnn.RnnParams(w_hh=p.w_hh, w_ih=2.0 * p.w_ih, a=np.zeros((3, 5)))
        rng = np.random.default_rng(9)
        x = rng.standard_normal((1, 3))
        h0 = np.abs(rng.standard_normal(5))
        r1 = rnn.rollout(p0, 1, inputs=x, h0=h0)
        r2 = rnn.rollout(p2, 1, inputs=x, h0=2.0 * h0)
        np.testing.assert_array_equal(r2.z[0], 2.0 * r1.z[0])


def fd_gradient(p, ro, dl, tau, h=1e-6):
    """Central-difference gradient of <dl, soft(params)> on every entry."""
    def loss_for(params):
        out = rnn.rollout(params, len(ro), inputs=ro.inputs, h0=ro.h0,
                          tau=tau, gumbel_stream=None)
        # replay the exact stored draws
        soft = rnn.gumbel_softmax(out.logits, tau, ro.gumbels)
        return float(np.sum(dl * soft))

    grads = {}
    for name in ("w_hh", "w_ih", "a"):
        base = getattr(p, name)
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            for sign in (1.0, -1.0):
                mat = base.copy()
                mat[idx] += sign * h
                blocks = {"w_hh": p.w_hh, "w_ih": p.w_ih, "a": p.a}
                blocks[name] = mat
                val = loss_for(rnn.RnnParams(**blocks))
                g[idx] += sign * val / (2 * h)
        grads[name] = g
    return grads


def _safe_net(seed, h=4, d=2, t=4):
    """A random net/rollout whose pre-activations stay away from the ReLU kink
    (finite differences are only valid off the kink)."""
    while True:
        p = rnn.init_params(h, d, RngStream(seed, 0))
        ro = rnn.rollout(p, t, input_stream=RngStream(seed, 1),
                         gumbel_stream=RngStream(seed, 2))
        if np.abs(ro.z).min() > 1e-4:
            return p, ro
        seed += 1000


class TestBptt:
    def test_zero_cotangent(self):
        p, ro = _safe_net(0)
        g = rnn.bptt(p, ro, np.zeros((4, 3)))
        assert g.norm() == 0.0

    def test_no_recurrent_path(self):
        p = random_params(1)
        p = rnn.RnnParams(w_hh=p.w_hh, w_ih=p.w_ih, a=np.zeros((3, 5)))
        ro = rnn.rollout(p, 1, input_stream=RngStream(1, 1),
                         gumbel_stream=RngStream(1, 2))
        g = rnn.bptt(p, ro, np.array([[1.0, 0.0, 0.0]]))
        np.testing.assert_array_equal(g.w_hh, np.zeros((5, 5)))
        np.testing.assert_array_equal(g.w_ih, np.zeros((5, 3)))
        assert np.any(g.a != 0.0)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_finite_differences(self, seed):
        p, ro = _safe_net(seed)
        dl = np.asarray(RngStream(seed, 3).gaussian((4, 3)))
        g = rnn.bptt(p, ro, dl)
        fd = fd_gradient(p, ro, dl, ro.tau)
        for name in ("w_hh", "w_ih", "a"):
            got = getattr(g, name)
            ref = fd[name]
            denom = np.maximum(np.abs(ref), 1e-6)
            assert np.max(np.abs(got - ref) / denom) < 1e-5

    def test_missing_state_rejected(self):
        p, ro = _safe_net(2)
        ro.gumbels = None
        with pytest.raises(StateError):
            rnn.bptt(p, ro, np.zeros((4, 3)))


class TestClip:
    def test_below_threshold_unchanged(self):
        g = rnn.Gradients(w_hh=np.full((2, 2), 0.1), w_ih=np.zeros((2, 1)),
                          a=np.zeros((3, 2)))
        out = rnn.clip_grad_norm(g, 0.9)
        assert out is g

    def test_rescaled_to_max_norm(self):
        g = rnn.Gradients(w_hh=np.full((3, 3), 3.0), w_ih=np.zeros((3, 2)),
                          a=np.zeros((3, 3)))
        out = rnn.clip_grad_norm(g, 0.9)
        np.testing.assert_allclose(out.norm(), 0.9, rtol=1e-12)

    def test_direction_preserved(self):
        rng = np.random.default_rng(0)
        g = rnn.Gradients(w_hh=rng.standard_normal((3, 3)) * 5,
                          w_ih=rng.standard_normal((3, 2)) * 5,
                          a=rng.standard_normal((3, 3)) * 5)
        out = rnn.clip_grad_norm(g, 0.9)
        flat_in = np.concatenate([g.w_hh.ravel(), g.w_ih.ravel(), g.a.ravel()])
        flat_out = np.concatenate([out.w_hh.ravel(), out.w_ih.ravel(), out.a.ravel()])
        cos = flat_in @ flat_out / (np.linalg.norm(flat_in) * np.linalg.norm(flat_out))
        np.testing.assert_allclose(cos, 1.0, rtol=1e-12)

    def test_positive_norm_required(self):
        g = rnn.Gradients(w_hh=np.zeros((2, 2)), w_ih=np.zeros((2, 1)),
                          a=np.zeros((3, 2)))
        with pytest.raises(ParameterError):
            rnn.clip_grad_norm(g, 0.0)


def test_hard_emissions_are_argmax():
    rng = np.random.default_rng(3)
    y = rng.standard_normal((10, 3))
    g = rng.standard_normal((10, 3))
    np.testing.assert_array_equal(rnn.hard_emissions(y, g), np.argmax(y + g, axis=1))
