"""Dense linear algebra, PCA, Adam, and random-stream contracts."""

import numpy as np
import pytest

from rnnmimic.errors import DimensionError, NumericError, ValidationError
from rnnmimic.numerics import (
    AdamState,
    RngStream,
    adam_step,
    eig,
    linear_fit,
    pca_fit,
    pca_project,
    pca_reconstruct,
)


class TestEig:
    def test_identity(self):
        vals = eig(np.eye(3))
        np.testing.assert_allclose(vals, np.ones(3))

    def test_rotation_spectrum(self):
        theta = np.pi / 4
        rot = np.array([[np.cos(theta), -np.sin(theta)],
                        [np.sin(theta), np.cos(theta)]])
        vals = eig(rot)
        expected = np.array([np.exp(1j * theta), np.exp(-1j * theta)])
        np.testing.assert_allclose(vals, expected, atol=1e-12)

    def test_known_diagonalization(self):
        rng = np.random.default_rng(3)
        d = np.array([5.0, -3.0, 2.0, 1.0, 0.5])
        q = rng.standard_normal((5, 5))
        m = q @ np.diag(d) @ np.linalg.inv(q)
        vals = eig(m)
        np.testing.assert_allclose(np.sort(vals.real), np.sort(d), atol=1e-8)
        assert np.abs(vals.imag).max() < 1e-8

    def test_sorted_by_descending_modulus(self):
        rng = np.random.default_rng(5)
        vals = eig(rng.standard_normal((8, 8)))
        mods = np.abs(vals)
        assert np.all(np.diff(mods) <= 1e-12)

    def test_trace_invariant(self):
        for seed in range(20):
            m = np.random.default_rng(seed).standard_normal((6, 6))
            vals = eig(m)
            np.testing.assert_allclose(vals.sum().real, np.trace(m), rtol=1e-8,
                                       atol=1e-10)
            assert abs(vals.sum().imag) < 1e-8

    def test_det_product(self):
        for seed in range(10):
            m = np.random.default_rng(seed).standard_normal((5, 5))
            vals = eig(m)
            det = abs(np.linalg.det(m))
            np.testing.assert_allclose(np.prod(np.abs(vals)), det, rtol=1e-8)

    def test_conjugate_pairs(self):
        for seed in range(10):
            m = np.random.default_rng(seed).standard_normal((7, 7))
            vals = eig(m)
            complex_vals = vals[np.abs(vals.imag) > 1e-12]
            paired = np.sort_complex(complex_vals)
            np.testing.assert_allclose(
                np.sort_complex(paired.conj()), paired, rtol=1e-9, atol=1e-9
            )

    def test_vectors_match_values(self):
        m = np.random.default_rng(1).standard_normal((6, 6))
        vals, vecs = eig(m, compute_vectors=True)
        for k in range(6):
            np.testing.assert_allclose(m @ vecs[:, k], vals[k] * vecs[:, k],
                                       atol=1e-8)

    def test_non_square_rejected(self):
        with pytest.raises(DimensionError):
            eig(np.zeros((2, 3)))


class TestPca:
    def test_line_in_3d(self):
        t = np.linspace(-1, 1, 200)
        direction = np.array([1.0, 2.0, -0.5])
        data = t[:, None] * direction[None, :]
        basis = pca_fit(data, 2)
        assert basis.explained[0] / basis.explained.sum() >= 0.9999

    def test_isotropic_cloud(self):
        data = np.random.default_rng(0).standard_normal((10_000, 3))
        basis = pca_fit(data, 2)
        v0, v1 = basis.explained[:2]
        assert abs(v0 - v1) / v0 < 0.05

    def test_degenerate_zero_variance(self):
        data = np.ones((50, 4)) * 0.3
        basis = pca_fit(data, 2)
        np.testing.assert_allclose(basis.explained, 0.0, atol=1e-20)

    def test_orthonormal_components(self):
        data = np.random.default_rng(2).standard_normal((100, 6))
        basis = pca_fit(data, 4)
        gram = basis.components @ basis.components.T
        np.testing.assert_allclose(gram, np.eye(4), atol=1e-10)

    def test_project_mean_is_origin(self):
        data = np.random.default_rng(3).standard_normal((40, 5))
        basis = pca_fit(data, 3)
        np.testing.assert_allclose(pca_project(basis, basis.mean), 0.0, atol=1e-12)

    def test_component_row_is_unit_coordinate(self):
        data = np.random.default_rng(4).standard_normal((40, 5))
        basis = pca_fit(data, 3)
        coords = pca_project(basis, basis.components[1] + basis.mean)
        np.testing.assert_allclose(coords[0], [0.0, 1.0, 0.0], atol=1e-10)

    def test_projection_is_centered_dot_product(self):
        rng = np.random.default_rng(5)
        data = rng.standard_normal((60, 4))
        basis = pca_fit(data, 2)
        state = rng.standard_normal(4)
        expected = [(state - basis.mean) @ basis.components[k] for k in range(2)]
        np.testing.assert_allclose(pca_project(basis, state)[0], expected, atol=1e-12)

    def test_rank_k_roundtrip_lossless(self):
        rng = np.random.default_rng(6)
        factors = rng.standard_normal((80, 2)) @ rng.standard_normal((2, 7))
        basis = pca_fit(factors, 2)
        coords = pca_project(basis, factors)
        back = pca_reconstruct(basis, coords)
        np.testing.assert_allclose(back, factors, atol=1e-10)

    def test_explained_bounded_by_total_variance(self):
        data = np.random.default_rng(7).standard_normal((50, 5))
        total = np.var(data, axis=0, ddof=1).sum()
        partial = pca_fit(data, 3)
        assert partial.explained.sum() <= total + 1e-12
        full = pca_fit(data, 5)
        np.testing.assert_allclose(full.explained.sum(), total, rtol=1e-10)

    def test_k_out_of_range(self):
        data = np.zeros((10, 3))
        with pytest.raises(DimensionError):
            pca_fit(data, 4)
        with pytest.raises(DimensionError):
            pca_project(pca_fit(np.random.default_rng(0).standard_normal((5, 3)), 2),
                        np.zeros(4))


class TestAdam:
    def test_first_step_magnitude(self):
        params = {"w": np.array([1.0])}
        grads = {"w": np.array([2.0])}
        state = AdamState.init(params, lr=0.1)
        new, state = adam_step(params, grads, state)
        np.testing.assert_allclose(new["w"][0], 1.0 - 0.1 * 2.0 / (2.0 + 1e-8),
                                   rtol=1e-12)
        assert state.step == 1

    def test_zero_gradient_is_identity(self):
        params = {"w": np.arange(6.0).reshape(2, 3)}
        state = AdamState.init(params, lr=0.05)
        for _ in range(5):
            params, state = adam_step(params, {"w": np.zeros((2, 3))}, state)
        np.testing.assert_array_equal(params["w"], np.arange(6.0).reshape(2, 3))

    def test_two_steps_match_hand_recursion(self):
        lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
        g = 0.7
        w = 0.3
        m = v = 0.0
        expect = w
        for t in (1, 2):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            expect -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        params = {"w": np.array([w])}
        state = AdamState.init(params, lr=lr, beta1=b1, beta2=b2, eps=eps)
        for _ in range(2):
            params, state = adam_step(params, {"w": np.array([g])}, state)
        np.testing.assert_allclose(params["w"][0], expect, rtol=1e-14)

    def test_lr_scale_equivariance_exact(self):
        grads = {"w": np.random.default_rng(0).standard_normal(5)}
        params = {"w": np.zeros(5)}
        s1 = AdamState.init(params, lr=0.001)
        s2 = AdamState.init(params, lr=0.002)
        out1, _ = adam_step(params, grads, s1)
        out2, _ = adam_step(params, grads, s2)
        np.testing.assert_array_equal(out2["w"], 2.0 * out1["w"])

    def test_shape_mismatch(self):
        params = {"w": np.zeros(3)}
        state = AdamState.init(params, lr=0.1)
        with pytest.raises(DimensionError):
            adam_step(params, {"w": np.zeros(4)}, state)

    def test_non_finite_gradient_names_block(self):
        params = {"w_hh": np.zeros(2)}
        state = AdamState.init(params, lr=0.1)
        with pytest.raises(NumericError, match="w_hh"):
            adam_step(params, {"w_hh": np.array([1.0, np.inf])}, state)


class TestRngStream:
    def test_bit_identical_replay(self):
        a = RngStream(123, 5)
        b = RngStream(123, 5)
        np.testing.assert_array_equal(a.gaussian(100), b.gaussian(100))
        np.testing.assert_array_equal(a.uniform(50), b.uniform(50))
        np.testing.assert_array_equal(a.gumbel(50), b.gumbel(50))

    def test_distinct_streams_uncorrelated(self):
        a = RngStream(7, 0).gaussian(100_000)
        b = RngStream(7, 1).gaussian(100_000)
        rho = np.corrcoef(a, b)[0, 1]
        assert abs(rho) < 0.01

    def test_split_children_uncorrelated(self):
        children = RngStream(9, 0).split(3)
        draws = [c.gaussian(100_000) for c in children]
        for i in range(3):
            for j in range(i + 1, 3):
                assert abs(np.corrcoef(draws[i], draws[j])[0, 1]) < 0.01

    def test_split_is_stable(self):
        c1 = RngStream(11, 4).split(3)[2]
        c2 = RngStream(11, 4).child(2)
        np.testing.assert_array_equal(c1.uniform(10), c2.uniform(10))

    def test_gaussian_sigma(self):
        draws = RngStream(1, 0).gaussian(1_000_000, sigma=2.0)
        assert abs(draws.var() - 4.0) / 4.0 < 0.02

    def test_gumbel_moments(self):
        # standard Gumbel: mean = Euler-Mascheroni, var = pi^2/6
        draws = RngStream(2, 0).gumbel(200_000)
        assert abs(draws.mean() - 0.5772156649) < 0.01
        assert abs(draws.var() - np.pi**2 / 6) / (np.pi**2 / 6) < 0.02

    def test_categorical_point_mass(self):
        s = RngStream(3, 0)
        draws = s.categorical(np.array([1.0, 0.0, 0.0]), 1000)
        assert np.all(draws == 0)

    def test_categorical_frequencies(self):
        p = np.array([0.2, 0.5, 0.3])
        draws = RngStream(4, 0).categorical(p, 200_000)
        freq = np.bincount(draws, minlength=3) / draws.size
        np.testing.assert_allclose(freq, p, atol=0.005)

    def test_categorical_validation(self):
        s = RngStream(5, 0)
        with pytest.raises(ValidationError):
            s.categorical(np.array([0.5, 0.4]))
        with pytest.raises(ValidationError):
            s.categorical(np.array([1.5, -0.5]))

    def test_counter_advances(self):
        s = RngStream(6, 0)
        assert s.counter == 0
        s.uniform(10)
        s.gaussian(10)
        assert s.counter == 2


def test_linear_fit_recovers_line():
    x = np.arange(10.0)
    slope, intercept, r2 = linear_fit(x, 3.0 * x - 1.0)
    np.testing.assert_allclose([slope, intercept, r2], [3.0, -1.0, 1.0], atol=1e-12)
