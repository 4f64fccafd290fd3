"""Shared numerical primitives: dense spectra, PCA, Adam, random streams.

Matrices are plain float64 numpy arrays in row-major order throughout the
package; this module adds the small amount of structure the rest of the code
relies on (deterministic eigenvalue ordering, orthonormal PCA bases,
bias-corrected Adam, counter-based splittable random streams).
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError, ValidationError

__all__ = [
    "eig",
    "PcaBasis",
    "pca_fit",
    "pca_project",
    "pca_reconstruct",
    "AdamState",
    "adam_step",
    "RngStream",
]


def as_matrix(m, name="matrix"):
    """Coerce to a 2-D float64 C-order array, checking finiteness."""
    a = np.ascontiguousarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name} contains non-finite entries")
    return a


def eig(m, compute_vectors=False):
    """Eigenvalues of a square matrix, sorted by descending modulus.

    Complex eigenvalues of real input come in conjugate pairs; ties in
    modulus are broken by descending real part then descending imaginary
    part, so ordering is deterministic and conjugates stay adjacent.

    Returns the eigenvalue vector, or ``(values, vectors)`` with columns of
    ``vectors`` permuted to match when ``compute_vectors`` is set.
    """
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"eig requires a square matrix, got {a.shape}")
    try:
        if compute_vectors:
            vals, vecs = np.linalg.eig(a)
        else:
            vals = np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:  # QR iteration failed to converge
        raise NumericError(f"eigenvalue iteration did not converge: {exc}") from exc
    order = np.lexsort((-vals.imag, -vals.real, -np.abs(vals)))
    vals = vals[order]
    if compute_vectors:
        return vals, vecs[:, order]
    return vals


@dataclass
class PcaBasis:
    """Orthonormal principal-component basis of a state cloud.

    ``components`` has shape (k, H) with orthonormal rows; ``explained``
    holds the matching sample variances in non-increasing order.
    """

    mean: np.ndarray
    components: np.ndarray
    explained: np.ndarray

    @property
    def k(self):
        return self.components.shape[0]

    @property
    def width(self):
        return self.components.shape[1]


def pca_fit(data, k):
    """Top-``k`` principal components via covariance eigendecomposition.

    Requires at least two rows and ``k <= min(N, H)``.  Component signs are
    fixed so the largest-magnitude coordinate of each component is positive.
    """
    x = as_matrix(data, "data")
    n, width = x.shape
    if n < 2:
        raise DimensionError(f"pca_fit needs at least 2 rows, got {n}")
    if not 1 <= k <= min(n, width):
        raise DimensionError(f"k={k} out of range for data of shape {x.shape}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / (n - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:k]
    comps = vecs[:, order].T.copy()
    for row in comps:
        j = np.argmax(np.abs(row))
        if row[j] < 0:
            row *= -1.0
    explained = np.maximum(vals[order], 0.0)
    return PcaBasis(mean=mean, components=comps, explained=explained)


def pca_project(basis, states):
    """Coordinates of ``states`` in the basis (centered dot products)."""
    x = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if x.shape[1] != basis.width:
        raise DimensionError(
            f"state width {x.shape[1]} != basis width {basis.width}"
        )
    return (x - basis.mean) @ basis.components.T


def pca_reconstruct(basis, coords):
    """Map basis coordinates back to the ambient space."""
    c = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    if c.shape[1] != basis.k:
        raise DimensionError(f"coord width {c.shape[1]} != basis k {basis.k}")
    return c @ basis.components + basis.mean


@dataclass
class AdamState:
    """First/second moment estimates plus step count for a set of blocks."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def init(cls, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        """Zero-moment state matching the shapes of ``params`` (a dict)."""
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        state.m = {k: np.zeros_like(p) for k, p in params.items()}
        state.v = {k: np.zeros_like(p) for k, p in params.items()}
        return state


def adam_step(params, grads, state):
    """One bias-corrected Adam update.

    ``params`` and ``grads`` are dicts of arrays with identical keys and
    shapes.  Returns ``(new_params, state)``; the state is updated in place
    and its step count incremented.
    """
    if set(params) != set(grads) or set(params) != set(state.m):
        raise DimensionError("parameter/gradient/state blocks do not match")
    for key, g in grads.items():
        if g.shape != params[key].shape:
            raise DimensionError(f"gradient shape mismatch for block '{key}'")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in block '{key}'")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    out = {}
    for key, p in params.items():
        g = grads[key]
        state.m[key] = state.beta1 * state.m[key] + (1.0 - state.beta1) * g
        state.v[key] = state.beta2 * state.v[key] + (1.0 - state.beta2) * g * g
        m_hat = state.m[key] / bc1
        v_hat = state.v[key] / bc2
        out[key] = p - state.lr * (m_hat / (np.sqrt(v_hat) + state.eps))
    return out, state


def _child_id(seed, stream_id, index):
    """Derived 64-bit stream id, stable across platforms."""
    payload = f"{seed}:{stream_id}:{index}".encode()
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")


class RngStream:
    """Counter-based, splittable random stream (Philox under the hood).

    The same ``(seed, stream_id)`` always reproduces the same draw sequence;
    distinct stream ids give statistically independent sequences.  A stream
    must not be shared across concurrent callers: split it instead.
    """

    def __init__(self, seed, stream_id=0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.counter = 0
        self._gen = np.random.Generator(
            np.random.Philox(np.random.SeedSequence([self.seed, self.stream_id]))
        )

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"

    def split(self, n):
        """``n`` independent child streams with derived stream ids."""
        return [
            RngStream(self.seed, _child_id(self.seed, self.stream_id, i))
            for i in range(n)
        ]

    def child(self, index):
        """Single derived stream, equal to ``split(index + 1)[index]``."""
        return RngStream(self.seed, _child_id(self.seed, self.stream_id, index))

    def uniform(self, shape=None):
        """Uniform draws on [0, 1)."""
        self.counter += 1
        return self._gen.random(shape)

    def gaussian(self, shape=None, sigma=1.0):
        """Centered normal draws with standard deviation ``sigma``."""
        self.counter += 1
        return self._gen.standard_normal(shape) * sigma

    def gumbel(self, shape=None):
        """Standard Gumbel draws, computed as -log(-log(u)) from uniforms."""
        self.counter += 1
        u = self._gen.random(shape)
        u = np.where(u <= 0.0, np.finfo(float).tiny, u)
        return -np.log(-np.log(u))

    def categorical(self, p, shape=None):
        """Index draws from a probability vector ``p`` (validated)."""
        p = np.asarray(p, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise ValidationError("categorical requires a 1-D probability vector")
        if np.any(p < 0):
            raise ValidationError("categorical probabilities must be nonnegative")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValidationError(
                f"categorical probabilities sum to {p.sum()!r}, not 1 within 1e-9"
            )
        self.counter += 1
        cdf = np.cumsum(p)
        u = self._gen.random(shape)
        idx = np.searchsorted(cdf, u, side="right")
        return np.minimum(idx, p.size - 1)


def global_grad_norm(blocks):
    """L2 norm pooled over a dict of gradient blocks."""
    total = 0.0
    for g in blocks.values():
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def linear_fit(x, y):
    """Least-squares line fit; returns (slope, intercept, r_squared)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise DimensionError("linear_fit needs two same-length vectors, n >= 2")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r2
