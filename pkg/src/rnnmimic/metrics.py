"""Sequence-level performance metrics comparing emitted and reference
observation sequences: alignment-based Euclidean distance, empirical pair
transition matrices with squared differences, symbol frequencies, and
volatility.  Rows of the transition matrix conditioned on unseen symbols are
reported as missing rather than zero-filled.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import hmm as hmm_mod
from . import ot
from .errors import DimensionError, ParameterError
from .rnn import hard_emissions, rollout_many

__all__ = [
    "MetricReport",
    "aligned_euclidean",
    "empirical_transition",
    "transition_sq_diff",
    "observation_frequencies",
    "volatility",
    "evaluate_model",
    "sample_emissions",
]


def _flatten(seqs):
    lengths = {len(s) for s in seqs}
    if len(lengths) != 1:
        raise DimensionError(f"sequences have mixed lengths {sorted(lengths)}")
    return np.stack([s.one_hot().reshape(-1) for s in seqs])


def aligned_euclidean(rnn_seqs, hmm_seqs, eps=0.05, max_iters=500, tol=1e-6):
    """Mean and sd of Euclidean distances between plan-aligned sequences,
    plus the same statistic between two disjoint halves of the reference set
    (the self-baseline).

    Sequences are flattened one-hot vectors of dimension T*K; each emitted
    sequence is paired with the reference sequence carrying the largest
    coupling mass.
    """
    rnn_flat = _flatten(rnn_seqs)
    hmm_flat = _flatten(hmm_seqs)
    if rnn_flat.shape[1] != hmm_flat.shape[1]:
        raise DimensionError("emitted and reference sequence lengths differ")
    pairing = ot.align(rnn_flat, hmm_flat, eps, max_iters=max_iters, tol=tol)
    dists = np.linalg.norm(rnn_flat - hmm_flat[pairing], axis=1)
    half = hmm_flat.shape[0] // 2
    if half < 1:
        raise DimensionError("need at least 2 reference sequences for the baseline")
    first, second = hmm_flat[:half], hmm_flat[half : 2 * half]
    base_pairing = ot.align(first, second, eps, max_iters=max_iters, tol=tol)
    base = np.linalg.norm(first - second[base_pairing], axis=1)
    return (
        (float(dists.mean()), float(dists.std())),
        (float(base.mean()), float(base.std())),
    )


def empirical_transition(seqs, k=3):
    """Row-normalized successive-emission counts pooled over sequences.

    Returns ``(matrix, defined)``: rows for symbols never seen as a
    transition source hold NaN and are marked False in ``defined``.
    """
    counts = np.zeros((k, k))
    for s in seqs:
        o = s.observations
        if o.size < 2:
            continue
        np.add.at(counts, (o[:-1], o[1:]), 1.0)
    totals = counts.sum(axis=1)
    defined = totals > 0
    matrix = np.full((k, k), np.nan)
    matrix[defined] = counts[defined] / totals[defined, None]
    return matrix, defined


def transition_sq_diff(t_rnn, t_hmm):
    """Elementwise squared difference; NaN rows propagate as undefined."""
    t_rnn = np.asarray(t_rnn, dtype=np.float64)
    t_hmm = np.asarray(t_hmm, dtype=np.float64)
    if t_rnn.shape != t_hmm.shape:
        raise DimensionError("transition matrices must share a shape")
    return (t_rnn - t_hmm) ** 2


def observation_frequencies(seqs, k=3):
    """Pooled symbol frequencies across all steps of all sequences."""
    if not seqs:
        raise ParameterError("need at least one sequence")
    counts = np.zeros(k)
    for s in seqs:
        counts += np.bincount(s.observations, minlength=k)
    return counts / counts.sum()


def volatility(seqs):
    """Fraction of adjacent emission pairs that differ, pooled."""
    if not seqs:
        raise ParameterError("need at least one sequence")
    changed = 0
    total = 0
    for s in seqs:
        o = s.observations
        if o.size < 2:
            continue
        changed += int(np.sum(o[1:] != o[:-1]))
        total += o.size - 1
    if total == 0:
        raise ParameterError("sequences too short to measure volatility")
    return changed / total


@dataclass
class MetricReport:
    """Structured result of one evaluation run."""

    aligned_mean: float
    aligned_sd: float
    baseline_mean: float
    baseline_sd: float
    transition_rnn: np.ndarray
    transition_hmm: np.ndarray
    transition_sq_diff: np.ndarray
    transition_defined: np.ndarray
    freq_rnn: np.ndarray
    freq_hmm: np.ndarray
    volatility_rnn: float
    volatility_hmm: float
    n_sequences: int
    seq_len: int
    eps: float
    meta: dict = field(default_factory=dict)

    def to_json(self):
        def _mat(m):
            return [[None if np.isnan(v) else v for v in row] for row in np.asarray(m)]

        doc = {
            "aligned_euclidean": {"mean": self.aligned_mean, "sd": self.aligned_sd},
            "baseline": {"mean": self.baseline_mean, "sd": self.baseline_sd},
            "transition_rnn": _mat(self.transition_rnn),
            "transition_hmm": _mat(self.transition_hmm),
            "transition_sq_diff": _mat(self.transition_sq_diff),
            "transition_defined": [bool(v) for v in self.transition_defined],
            "freq_rnn": list(map(float, self.freq_rnn)),
            "freq_hmm": list(map(float, self.freq_hmm)),
            "volatility": {"rnn": self.volatility_rnn, "hmm": self.volatility_hmm},
            "n_sequences": self.n_sequences,
            "seq_len": self.seq_len,
            "eps": self.eps,
            "meta": self.meta,
        }
        return json.dumps(doc, sort_keys=True, indent=2)


def sample_emissions(params, n_sequences, seq_len, stream, sigma=1.0, burn_in=200, tau=1.0):
    """Hard (Gumbel-max) emission sequences from noisy rollouts.

    Rollouts start at h0 = 0 and discard ``burn_in`` steps before the
    ``seq_len`` scored steps.
    """
    total = burn_in + seq_len
    x = stream.child(0).gaussian((n_sequences, total, params.input_size), sigma=sigma)
    g = stream.child(1).gumbel((n_sequences, total, 3))
    _, _, y, _ = rollout_many(params, x, g=None, tau=tau, h0=np.zeros((n_sequences, params.hidden_size)))
    obs = hard_emissions(y[:, burn_in:, :], g[:, burn_in:, :])
    return [hmm_mod.ObsSequence(observations=row) for row in obs]


def evaluate_model(params, spec, n_sequences=500, seq_len=100, stream=None, eps=0.05,
                   sigma=1.0, burn_in=200, tau=1.0, align_max_iters=500, align_tol=1e-6):
    """Full metric battery for a trained network against its target chain.

    The reference side of the transition/frequency/volatility comparisons is
    analytic (stationary statistics of the chain); the alignment baseline is
    empirical from freshly sampled reference sequences.
    """
    if stream is None:
        raise ParameterError("evaluate_model requires an RngStream")
    rnn_seqs = sample_emissions(
        params, n_sequences, seq_len, stream.child(0), sigma=sigma, burn_in=burn_in, tau=tau
    )
    hmm_seqs = hmm_mod.sample_many(spec, seq_len, n_sequences, stream.child(1))
    (al_mean, al_sd), (b_mean, b_sd) = aligned_euclidean(
        rnn_seqs, hmm_seqs, eps, max_iters=align_max_iters, tol=align_tol
    )
    t_rnn, defined = empirical_transition(rnn_seqs)
    t_hmm = hmm_mod.obs_pair_matrix(spec)
    sq = transition_sq_diff(t_rnn, t_hmm)
    return MetricReport(
        aligned_mean=al_mean,
        aligned_sd=al_sd,
        baseline_mean=b_mean,
        baseline_sd=b_sd,
        transition_rnn=t_rnn,
        transition_hmm=t_hmm,
        transition_sq_diff=sq,
        transition_defined=defined,
        freq_rnn=observation_frequencies(rnn_seqs),
        freq_hmm=hmm_mod.obs_frequencies(spec),
        volatility_rnn=volatility(rnn_seqs),
        volatility_hmm=hmm_mod.obs_volatility(spec),
        n_sequences=n_sequences,
        seq_len=seq_len,
        eps=eps,
    )
