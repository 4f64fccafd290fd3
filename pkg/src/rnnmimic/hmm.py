"""Hidden Markov model families, sampling, and analytic observation statistics.

Three latent topologies are supported: band-diagonal linear chains built from
a change-rate parameter, and fully-connected / cyclic presets.  All chains
emit from a three-symbol alphabet.  Indices are 0-based internally; reports
print 1-based labels.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionError,
    FormatError,
    ParameterError,
    StructureError,
    UndefinedRowError,
    ValidationError,
)

__all__ = [
    "HmmSpec",
    "ObsSequence",
    "build_linear_chain",
    "build_preset",
    "sample",
    "sample_many",
    "stationary_distribution",
    "obs_pair_matrix",
    "obs_frequencies",
    "obs_volatility",
]

_ROW_TOL = 1e-12


@dataclass
class HmmSpec:
    """Transition matrix, emission matrix and initial distribution.

    ``T`` is M x M row-stochastic, ``E`` is M x K row-stochastic, ``pi0`` a
    probability vector over the M states.
    """

    T: np.ndarray
    E: np.ndarray
    pi0: np.ndarray

    def __post_init__(self):
        self.T = np.ascontiguousarray(self.T, dtype=np.float64)
        self.E = np.ascontiguousarray(self.E, dtype=np.float64)
        self.pi0 = np.ascontiguousarray(self.pi0, dtype=np.float64)
        if self.T.ndim != 2 or self.T.shape[0] != self.T.shape[1]:
            raise DimensionError(f"T must be square, got {self.T.shape}")
        m = self.T.shape[0]
        if self.E.ndim != 2 or self.E.shape[0] != m:
            raise DimensionError(f"E must have {m} rows, got {self.E.shape}")
        if self.pi0.shape != (m,):
            raise DimensionError(f"pi0 must have shape ({m},), got {self.pi0.shape}")
        for name, mat in (("T", self.T), ("E", self.E)):
            if np.any(mat < 0) or np.any(mat > 1):
                raise ValidationError(f"{name} entries must lie in [0, 1]")
            rows = mat.sum(axis=1)
            if np.max(np.abs(rows - 1.0)) > _ROW_TOL:
                raise ValidationError(f"rows of {name} must sum to 1 within {_ROW_TOL}")
        if np.any(self.pi0 < 0) or abs(self.pi0.sum() - 1.0) > _ROW_TOL:
            raise ValidationError("pi0 must be a probability vector")

    @property
    def M(self):
        return self.T.shape[0]

    @property
    def K(self):
        return self.E.shape[1]

    def to_json(self):
        """Serialize to the documented JSON schema."""
        return json.dumps(
            {
                "M": self.M,
                "K": self.K,
                "T": self.T.tolist(),
                "E": self.E.tolist(),
                "pi0": self.pi0.tolist(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
            spec = cls(T=np.array(doc["T"]), E=np.array(doc["E"]), pi0=np.array(doc["pi0"]))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise FormatError(f"malformed HMM document: {exc}") from exc
        if spec.M != doc["M"] or spec.K != doc["K"]:
            raise FormatError("M/K fields disagree with matrix shapes")
        return spec


@dataclass
class ObsSequence:
    """A sampled observation sequence over the 3-symbol alphabet."""

    observations: np.ndarray
    K: int = 3

    def __post_init__(self):
        self.observations = np.ascontiguousarray(self.observations, dtype=np.int64)
        if self.observations.ndim != 1:
            raise DimensionError("observations must be a 1-D index vector")
        if self.observations.size and not (
            0 <= self.observations.min() and self.observations.max() < self.K
        ):
            raise ValidationError(f"observation indices must lie in [0, {self.K})")

    def __len__(self):
        return self.observations.size

    def one_hot(self):
        """Length x K one-hot view as float64."""
        out = np.zeros((len(self), self.K))
        out[np.arange(len(self)), self.observations] = 1.0
        return out


def build_linear_chain(M, rho=0.05, eps=0.01):
    """Band-diagonal chain with interpolated emissions.

    The stay/step probabilities keep a constant probability ``rho`` of
    reaching the most distant state in M-1 steps: q = rho^(1/(M-1)), end
    states keep 1-q, interior states 1-2q.  Emission row i interpolates
    between the two outer symbols with the middle symbol pinned at ``eps``.
    """
    if M < 2:
        raise ParameterError(f"linear chain needs M >= 2, got {M}")
    if not 0 < rho < 1 or not 0 < eps < 1:
        raise ParameterError("rho and eps must lie strictly inside (0, 1)")
    q = rho ** (1.0 / (M - 1))
    if q >= 0.5:
        raise ParameterError(
            f"step probability q={q:.4f} >= 1/2: transition rows would leave the simplex"
        )
    T = np.zeros((M, M))
    for i in range(M):
        T[i, i] = 1.0 - q if i in (0, M - 1) else 1.0 - 2.0 * q
        if i > 0:
            T[i, i - 1] = q
        if i < M - 1:
            T[i, i + 1] = q
    alphas = np.arange(M) / (M - 1)
    E = np.stack([(1 - eps) * (1 - alphas), np.full(M, eps), (1 - eps) * alphas], axis=1)
    pi0 = np.full(M, 1.0 / M)
    return HmmSpec(T=T, E=E, pi0=pi0)


# Repository defaults for the preset topologies; qualitative constraints only
# (each fully-connected state dominates one distinct output; cyclic states
# emit a dominant/weak pair shared with their ring neighbors).  Overridable
# by passing a full HmmSpec document instead.
_FULLY_CONNECTED = {
    "T": [[0.90, 0.05, 0.05], [0.05, 0.90, 0.05], [0.05, 0.05, 0.90]],
    "E": [[0.90, 0.05, 0.05], [0.05, 0.90, 0.05], [0.05, 0.05, 0.90]],
}
_CYCLIC = {
    "T": [
        [0.90, 0.05, 0.00, 0.05],
        [0.05, 0.90, 0.05, 0.00],
        [0.00, 0.05, 0.90, 0.05],
        [0.05, 0.00, 0.05, 0.90],
    ],
    "E": [
        [0.70, 0.29, 0.01],
        [0.01, 0.70, 0.29],
        [0.29, 0.01, 0.70],
        [0.70, 0.01, 0.29],
    ],
}


def build_preset(kind):
    """Default fully-connected (3-state) or cyclic (4-state) chain."""
    if kind == "fully_connected":
        doc = _FULLY_CONNECTED
    elif kind == "cyclic":
        doc = _CYCLIC
    else:
        raise ParameterError(f"unknown preset kind {kind!r}")
    m = len(doc["T"])
    return HmmSpec(T=np.array(doc["T"]), E=np.array(doc["E"]), pi0=np.full(m, 1.0 / m))


def sample(spec, length, stream):
    """One (state sequence, observation sequence) pair of the given length.

    States follow ``pi0`` then rows of ``T``; observations follow rows of
    ``E``.  Deterministic given the stream.
    """
    if length < 1:
        raise ParameterError(f"length must be >= 1, got {length}")
    t_cdf = np.cumsum(spec.T, axis=1)
    u_states = stream.uniform(length)
    states = np.empty(length, dtype=np.int64)
    s = min(int(np.searchsorted(np.cumsum(spec.pi0), u_states[0], side="right")), spec.M - 1)
    states[0] = s
    for t in range(1, length):
        s = int(np.searchsorted(t_cdf[s], u_states[t], side="right"))
        s = min(s, spec.M - 1)
        states[t] = s
    e_cdf = np.cumsum(spec.E, axis=1)
    u_obs = stream.uniform(length)
    obs = (u_obs[:, None] >= e_cdf[states]).sum(axis=1)
    obs = np.minimum(obs, spec.K - 1)
    return states, ObsSequence(observations=obs, K=spec.K)


def sample_many(spec, length, count, stream):
    """``count`` independent sequences, one split stream each."""
    children = stream.split(count)
    out = []
    for child in children:
        _, seq = sample(spec, length, child)
        out.append(seq)
    return out


def _check_primitive(T):
    """Numerical irreducibility+aperiodicity: some power of T is positive."""
    m = T.shape[0]
    power = np.eye(m)
    limit = (m - 1) ** 2 + 1
    for _ in range(limit):
        power = power @ T
        if np.all(power > 0):
            return
    raise StructureError(
        "chain is reducible or periodic: no power of T is strictly positive"
    )


def stationary_distribution(spec):
    """Stationary distribution pi with pi T = pi (primitive chains only)."""
    _check_primitive(spec.T)
    vals, vecs = np.linalg.eig(spec.T.T)
    idx = int(np.argmin(np.abs(vals - 1.0)))
    pi = np.real(vecs[:, idx])
    pi = np.abs(pi)
    pi = pi / pi.sum()
    # one power-iteration polish to push the residual to rounding level
    for _ in range(5):
        pi = pi @ spec.T
        pi = pi / pi.sum()
    return pi


def obs_frequencies(spec):
    """Marginal observation distribution under stationarity: pi^T E."""
    pi = stationary_distribution(spec)
    return pi @ spec.E


def obs_pair_matrix(spec):
    """Successive-observation transition matrix under stationarity.

    Entry (i, j) is P(o_{t+1}=j | o_t=i); rows for symbols with zero
    stationary mass are undefined and raise.
    """
    pi = stationary_distribution(spec)
    freq = pi @ spec.E
    dead = np.nonzero(freq <= 0.0)[0]
    if dead.size:
        raise UndefinedRowError(
            f"observation symbols {dead.tolist()} have zero stationary mass"
        )
    joint = spec.E.T @ np.diag(pi) @ spec.T @ spec.E
    return joint / freq[:, None]


def obs_volatility(spec):
    """Probability that successive observations differ under stationarity."""
    pi = stationary_distribution(spec)
    joint_diag = np.einsum("s,si,st,ti->", pi, spec.E, spec.T, spec.E)
    return float(1.0 - joint_diag)
