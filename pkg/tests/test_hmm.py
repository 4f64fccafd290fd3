"""HMM construction, sampling, and analytic observation statistics."""

import numpy as np
import pytest

from rnnmimic import hmm
from rnnmimic.errors import (
    ParameterError,
    StructureError,
    UndefinedRowError,
    ValidationError,
)
from rnnmimic.numerics import RngStream


class TestLinearChain:
    def test_m2_exact_matrices(self):
        spec = hmm.build_linear_chain(2)
        np.testing.assert_allclose(spec.T, [[0.95, 0.05], [0.05, 0.95]], atol=1e-15)
        np.testing.assert_allclose(
            spec.E, [[0.99, 0.01, 0.0], [0.0, 0.01, 0.99]], atol=1e-15
        )
        np.testing.assert_allclose(spec.pi0, [0.5, 0.5])

    def test_m5_band_and_interpolation(self):
        spec = hmm.build_linear_chain(5)
        q5 = 0.05 ** 0.25
        np.testing.assert_allclose(spec.T[0, 0], 1 - q5, rtol=1e-15)
        np.testing.assert_allclose(spec.T[2, 2], 1 - 2 * q5, rtol=1e-12)
        np.testing.assert_allclose(spec.T[2, 1], q5, rtol=1e-15)
        assert spec.T[0, 2] == 0.0 and spec.T[4, 1] == 0.0
        np.testing.assert_allclose(spec.E[2], [0.495, 0.01, 0.495], atol=1e-15)

    def test_change_rate_design_property(self):
        for m in (2, 3, 4, 5):
            spec = hmm.build_linear_chain(m)
            q = spec.T[0, 1]
            np.testing.assert_allclose(q ** (m - 1), 0.05, rtol=1e-13)

    def test_boundary_rejection(self):
        with pytest.raises(ParameterError):
            hmm.build_linear_chain(3, rho=1.0)
        with pytest.raises(ParameterError):
            hmm.build_linear_chain(6)  # q_6 = 0.05^(1/5) > 1/2

    def test_rows_stochastic(self):
        for m in (2, 3, 4, 5):
            spec = hmm.build_linear_chain(m)
            np.testing.assert_allclose(spec.T.sum(axis=1), 1.0, atol=1e-12)
            np.testing.assert_allclose(spec.E.sum(axis=1), 1.0, atol=1e-12)


class TestPresets:
    def test_fully_connected(self):
        spec = hmm.build_preset("fully_connected")
        assert spec.M == 3
        assert np.all(spec.T > 0)
        assert sorted(np.argmax(spec.E, axis=1)) == [0, 1, 2]

    def test_cyclic_ring_structure(self):
        spec = hmm.build_preset("cyclic")
        assert spec.M == 4
        for i in range(4):
            for j in range(4):
                if j not in (i, (i + 1) % 4, (i - 1) % 4):
                    assert spec.T[i, j] == 0.0
                else:
                    assert spec.T[i, j] > 0.0

    def test_cyclic_emission_pairs(self):
        spec = hmm.build_preset("cyclic")
        for i in range(4):
            row = np.sort(spec.E[i])[::-1]
            assert row[0] >= 0.5 and row[1] >= 0.1 and row[2] <= 0.05
        # adjacent states share one of their two main outputs
        for i in range(4):
            top_i = set(np.argsort(spec.E[i])[::-1][:2])
            top_j = set(np.argsort(spec.E[(i + 1) % 4])[::-1][:2])
            assert top_i & top_j

    def test_rows_stochastic(self):
        for kind in ("fully_connected", "cyclic"):
            spec = hmm.build_preset(kind)
            np.testing.assert_allclose(spec.T.sum(axis=1), 1.0, atol=1e-12)
            np.testing.assert_allclose(spec.E.sum(axis=1), 1.0, atol=1e-12)

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            hmm.build_preset("ring")


class TestSampling:
    def test_absorbing_identity_chain(self):
        spec = hmm.HmmSpec(
            T=np.eye(2), E=np.array([[1.0, 0, 0], [0, 0, 1.0]]),
            pi0=np.array([0.0, 1.0]),
        )
        states, seq = hmm.sample(spec, 50, RngStream(0, 0))
        assert np.all(states == 1)
        assert np.all(seq.observations == 2)

    def test_deterministic_emission(self):
        spec = hmm.HmmSpec(
            T=np.array([[0.5, 0.5], [0.5, 0.5]]),
            E=np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]),
            pi0=np.array([0.5, 0.5]),
        )
        _, seq = hmm.sample(spec, 100, RngStream(1, 0))
        assert np.all(seq.observations == 2)

    def test_transition_frequencies_match(self):
        spec = hmm.build_linear_chain(2)
        states, _ = hmm.sample(spec, 200_000, RngStream(2, 0))
        counts = np.zeros((2, 2))
        np.add.at(counts, (states[:-1], states[1:]), 1.0)
        empirical = counts / counts.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(empirical, spec.T, atol=0.01)

    def test_bit_reproducible(self):
        spec = hmm.build_linear_chain(3)
        s1, o1 = hmm.sample(spec, 500, RngStream(3, 9))
        s2, o2 = hmm.sample(spec, 500, RngStream(3, 9))
        np.testing.assert_array_equal(s1, s2)
        np.testing.assert_array_equal(o1.observations, o2.observations)

    def test_one_hot_view(self):
        _, seq = hmm.sample(hmm.build_linear_chain(2), 40, RngStream(4, 0))
        oh = seq.one_hot()
        np.testing.assert_allclose(oh.sum(axis=1), 1.0)
        np.testing.assert_array_equal(np.argmax(oh, axis=1), seq.observations)

    def test_length_validation(self):
        with pytest.raises(ParameterError):
            hmm.sample(hmm.build_linear_chain(2), 0, RngStream(0, 0))


class TestStationary:
    def test_symmetric_two_state(self):
        pi = hmm.stationary_distribution(hmm.build_linear_chain(2))
        np.testing.assert_allclose(pi, [0.5, 0.5], atol=1e-12)

    def test_identity_rejected(self):
        spec = hmm.HmmSpec(
            T=np.eye(2), E=np.array([[1.0, 0, 0], [0, 0, 1.0]]),
            pi0=np.array([0.5, 0.5]),
        )
        with pytest.raises(StructureError):
            hmm.stationary_distribution(spec)

    def test_left_eigenvector_residual(self):
        for m in (3, 5):
            spec = hmm.build_linear_chain(m)
            pi = hmm.stationary_distribution(spec)
            np.testing.assert_allclose(pi @ spec.T, pi, atol=1e-12)
            np.testing.assert_allclose(pi.sum(), 1.0, atol=1e-12)
            assert np.all(pi >= 0)


class TestObservationStatistics:
    def test_pair_matrix_m2_first_row(self):
        # conditional next-symbol distribution given the first symbol,
        # computed by hand from pi = (1/2, 1/2) and the M=2 matrices
        pair = hmm.obs_pair_matrix(hmm.build_linear_chain(2))
        np.testing.assert_allclose(pair[0], [0.9405, 0.01, 0.0495], atol=1e-12)

    def test_pair_matrix_rows_sum_to_one(self):
        for build in (lambda: hmm.build_linear_chain(4),
                      lambda: hmm.build_preset("fully_connected"),
                      lambda: hmm.build_preset("cyclic")):
            pair = hmm.obs_pair_matrix(build())
            np.testing.assert_allclose(pair.sum(axis=1), 1.0, atol=1e-12)

    def test_single_state_rows_equal_emission(self):
        spec = hmm.HmmSpec(
            T=np.array([[1.0]]), E=np.array([[0.2, 0.3, 0.5]]), pi0=np.array([1.0])
        )
        pair = hmm.obs_pair_matrix(spec)
        for i in range(3):
            np.testing.assert_allclose(pair[i], [0.2, 0.3, 0.5], atol=1e-12)

    def test_zero_mass_symbol_rejected(self):
        spec = hmm.HmmSpec(
            T=np.array([[0.5, 0.5], [0.5, 0.5]]),
            E=np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0]]),
            pi0=np.array([0.5, 0.5]),
        )
        with pytest.raises(UndefinedRowError):
            hmm.obs_pair_matrix(spec)

    def test_frequencies_m2(self):
        freq = hmm.obs_frequencies(hmm.build_linear_chain(2))
        np.testing.assert_allclose(freq, [0.495, 0.01, 0.495], atol=1e-12)

    def test_volatility_m2(self):
        # 1 - sum_i P(o_t = i, o_{t+1} = i)
        # = 1 - (2 * 0.495 * 0.9405 + 0.01 * 0.01) = 0.068805
        vol = hmm.obs_volatility(hmm.build_linear_chain(2))
        np.testing.assert_allclose(vol, 0.068805, atol=1e-12)

    def test_volatility_deterministic_chain(self):
        spec = hmm.HmmSpec(
            T=np.array([[1.0]]), E=np.array([[0.0, 0.0, 1.0]]), pi0=np.array([1.0])
        )
        assert hmm.obs_volatility(spec) == pytest.approx(0.0, abs=1e-15)

    def test_empirical_agreement_medium_run(self):
        spec = hmm.build_preset("cyclic")
        _, seq = hmm.sample(spec, 200_000, RngStream(6, 0))
        obs = seq.observations
        freq = np.bincount(obs, minlength=3) / obs.size
        np.testing.assert_allclose(freq, hmm.obs_frequencies(spec), atol=0.01)
        counts = np.zeros((3, 3))
        np.add.at(counts, (obs[:-1], obs[1:]), 1.0)
        empirical = counts / counts.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(empirical, hmm.obs_pair_matrix(spec), atol=0.02)


class TestSerialization:
    def test_roundtrip_exact(self):
        spec = hmm.build_linear_chain(5)
        clone = hmm.HmmSpec.from_json(spec.to_json())
        np.testing.assert_array_equal(clone.T, spec.T)
        np.testing.assert_array_equal(clone.E, spec.E)
        np.testing.assert_array_equal(clone.pi0, spec.pi0)

    def test_invalid_rows_rejected(self):
        with pytest.raises(ValidationError):
            hmm.HmmSpec(
                T=np.array([[0.6, 0.3], [0.5, 0.5]]),
                E=np.array([[1.0, 0, 0], [1.0, 0, 0]]),
                pi0=np.array([0.5, 0.5]),
            )
