"""Vanilla ReLU recurrent network with a Gumbel-Softmax emission head.

Row-vector state convention throughout: ``z_t = h_{t-1} W_hh^T + x_t W_ih^T``,
``h_t = max(z_t, 0)``, ``y_t = h_t A^T``.  The same convention fixes the
Jacobian orientation used by the dynamics analyses.  Gumbel draws are stored
in rollouts so training is deterministic given seeds and so BPTT can replay
the exact forward pass; hard emissions for evaluation use argmax(y + g).
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import backend
from .errors import DimensionError, ParameterError, StateError

__all__ = [
    "RnnParams",
    "Rollout",
    "Gradients",
    "init_params",
    "step",
    "readout",
    "gumbel_softmax",
    "rollout",
    "rollout_many",
    "bptt",
    "bptt_many",
    "clip_grad_norm",
    "hard_emissions",
]


@dataclass
class RnnParams:
    """The three weight matrices: recurrent (H,H), input (H,d), readout (3,H)."""

    w_hh: np.ndarray
    w_ih: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        self.w_hh = np.ascontiguousarray(self.w_hh, dtype=np.float64)
        self.w_ih = np.ascontiguousarray(self.w_ih, dtype=np.float64)
        self.a = np.ascontiguousarray(self.a, dtype=np.float64)
        h = self.w_hh.shape[0]
        if self.w_hh.shape != (h, h):
            raise DimensionError(f"w_hh must be square, got {self.w_hh.shape}")
        if self.w_ih.ndim != 2 or self.w_ih.shape[0] != h:
            raise DimensionError(f"w_ih must have {h} rows, got {self.w_ih.shape}")
        if self.a.shape != (3, h):
            raise DimensionError(f"a must have shape (3, {h}), got {self.a.shape}")
        for name, m in (("w_hh", self.w_hh), ("w_ih", self.w_ih), ("a", self.a)):
            if not np.all(np.isfinite(m)):
                raise DimensionError(f"{name} contains non-finite entries")

    @property
    def hidden_size(self):
        return self.w_hh.shape[0]

    @property
    def input_size(self):
        return self.w_ih.shape[1]

    def blocks(self):
        return {"w_hh": self.w_hh, "w_ih": self.w_ih, "a": self.a}

    @classmethod
    def from_blocks(cls, blocks):
        return cls(w_hh=blocks["w_hh"], w_ih=blocks["w_ih"], a=blocks["a"])


@dataclass
class Gradients:
    """Gradient blocks mirroring RnnParams shapes."""

    w_hh: np.ndarray
    w_ih: np.ndarray
    a: np.ndarray

    def blocks(self):
        return {"w_hh": self.w_hh, "w_ih": self.w_ih, "a": self.a}

    def norm(self):
        return math.sqrt(
            float(np.sum(self.w_hh**2) + np.sum(self.w_ih**2) + np.sum(self.a**2))
        )


@dataclass
class Rollout:
    """Stored forward pass of one sequence.

    ``soft`` rows always sum to 1; when no Gumbel stream was supplied the
    stored draws are zero and the trajectory is deterministic.
    """

    inputs: np.ndarray
    z: np.ndarray
    h: np.ndarray
    logits: np.ndarray
    gumbels: Optional[np.ndarray]
    soft: np.ndarray
    h0: np.ndarray
    tau: float

    def __len__(self):
        return self.h.shape[0]


def init_params(hidden_size, input_size, stream):
    """Uniform initialization on (-sqrt(1/H), +sqrt(1/H)) for all matrices."""
    if hidden_size < 1 or input_size < 1:
        raise ParameterError("hidden_size and input_size must be >= 1")
    bound = math.sqrt(1.0 / hidden_size)
    w_hh = (stream.uniform((hidden_size, hidden_size)) * 2.0 - 1.0) * bound
    w_ih = (stream.uniform((hidden_size, input_size)) * 2.0 - 1.0) * bound
    a = (stream.uniform((3, hidden_size)) * 2.0 - 1.0) * bound
    return RnnParams(w_hh=w_hh, w_ih=w_ih, a=a)


def step(params, h_prev, x):
    """One update: returns (z, h) with h = relu(z)."""
    h_prev = np.asarray(h_prev, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if h_prev.shape[-1] != params.hidden_size:
        raise DimensionError(
            f"state width {h_prev.shape[-1]} != hidden size {params.hidden_size}"
        )
    if x.shape[-1] != params.input_size:
        raise DimensionError(
            f"input width {x.shape[-1]} != input size {params.input_size}"
        )
    z = h_prev @ params.w_hh.T + x @ params.w_ih.T
    return z, np.maximum(z, 0.0)


def readout(params, h):
    """Logits y = h A^T."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != params.hidden_size:
        raise DimensionError(
            f"state width {h.shape[-1]} != hidden size {params.hidden_size}"
        )
    return h @ params.a.T


def gumbel_softmax(logits, tau, g):
    """Softmax of (logits + g) / tau with max-subtraction for stability."""
    if tau <= 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    u = (np.asarray(logits, dtype=np.float64) + np.asarray(g, dtype=np.float64)) / tau
    u = u - u.max(axis=-1, keepdims=True)
    e = np.exp(u)
    return e / e.sum(axis=-1, keepdims=True)


def rollout(
    params,
    t_len,
    *,
    inputs=None,
    input_stream=None,
    input_sigma=1.0,
    h0=None,
    tau=1.0,
    gumbel_stream=None,
    act_scale=None,
):
    """Iterate step/readout/gumbel_softmax for ``t_len`` steps.

    Input source is, in priority order: an explicit (T,d) array, Gaussian
    draws from ``input_stream`` with standard deviation ``input_sigma``, or
    zeros.  With zero inputs and no Gumbel stream this is the deterministic
    autonomous trajectory used by the fixed-point analyses.
    """
    if t_len < 1:
        raise ParameterError(f"t_len must be >= 1, got {t_len}")
    if tau <= 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    d = params.input_size
    if inputs is not None:
        x = np.ascontiguousarray(inputs, dtype=np.float64)
        if x.shape != (t_len, d):
            raise DimensionError(f"inputs must have shape ({t_len}, {d}), got {x.shape}")
    elif input_stream is not None:
        x = np.ascontiguousarray(input_stream.gaussian((t_len, d), sigma=input_sigma))
    else:
        x = np.zeros((t_len, d))
    if gumbel_stream is not None:
        g = np.ascontiguousarray(gumbel_stream.gumbel((t_len, 3)))
        g_stored = g
    else:
        g = np.zeros((t_len, 3))
        g_stored = g
    if h0 is None:
        h0 = np.zeros(params.hidden_size)
    h0 = np.ascontiguousarray(h0, dtype=np.float64)
    if h0.shape != (params.hidden_size,):
        raise DimensionError(f"h0 must have shape ({params.hidden_size},)")
    z, h, y, s = backend.rollout_batch(
        params.w_hh,
        params.w_ih,
        params.a,
        x[None, :, :],
        g[None, :, :],
        float(tau),
        h0[None, :],
        act_scale,
    )
    return Rollout(
        inputs=x,
        z=z[0],
        h=h[0],
        logits=y[0],
        gumbels=g_stored,
        soft=s[0],
        h0=h0,
        tau=float(tau),
    )


def rollout_many(params, x, g=None, tau=1.0, h0=None, act_scale=None):
    """Batched rollout: x is (B,T,d), g is (B,T,3) or None (zeros).

    Returns raw arrays ``(z, h, y, soft)`` each with leading (B,T) axes.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != params.input_size:
        raise DimensionError(f"x must be (B,T,{params.input_size}), got {x.shape}")
    b = x.shape[0]
    if g is None:
        g = np.zeros((b, x.shape[1], 3))
    g = np.ascontiguousarray(g, dtype=np.float64)
    if h0 is None:
        h0 = np.zeros((b, params.hidden_size))
    h0 = np.ascontiguousarray(h0, dtype=np.float64)
    return backend.rollout_batch(
        params.w_hh, params.w_ih, params.a, x, g, float(tau), h0, act_scale
    )


def bptt(params, ro, dl_dsoft, tau=None):
    """Exact reverse-mode gradients of params -> soft samples, contracted
    with ``dl_dsoft`` (T,3).  Requires the rollout's stored pre-activations
    and Gumbel draws.
    """
    if ro.z is None or ro.gumbels is None:
        raise StateError("rollout is missing stored pre-activations or Gumbel draws")
    t = tau if tau is not None else ro.tau
    dl = np.ascontiguousarray(dl_dsoft, dtype=np.float64)
    if dl.shape != ro.soft.shape:
        raise DimensionError(f"dl_dsoft must have shape {ro.soft.shape}, got {dl.shape}")
    dw_hh, dw_ih, da = backend.bptt_batch(
        params.w_hh,
        params.w_ih,
        params.a,
        ro.inputs[None, :, :],
        ro.h0[None, :],
        ro.z[None, :, :],
        ro.h[None, :, :],
        ro.soft[None, :, :],
        dl[None, :, :],
        float(t),
    )
    return Gradients(w_hh=dw_hh, w_ih=dw_ih, a=da)


def bptt_many(params, x, h0, z, h, soft, dl_dsoft, tau):
    """Batched BPTT over raw rollout arrays; gradients are summed over the
    batch in fixed order."""
    dw_hh, dw_ih, da = backend.bptt_batch(
        params.w_hh,
        params.w_ih,
        params.a,
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(h0, dtype=np.float64),
        z,
        h,
        soft,
        np.ascontiguousarray(dl_dsoft, dtype=np.float64),
        float(tau),
    )
    return Gradients(w_hh=dw_hh, w_ih=dw_ih, a=da)


def clip_grad_norm(grads, max_norm):
    """Rescale all blocks to a global L2 norm of ``max_norm`` if exceeded."""
    if max_norm <= 0:
        raise ParameterError(f"max_norm must be positive, got {max_norm}")
    norm = grads.norm()
    if norm <= max_norm or not math.isfinite(norm):
        return grads
    scale = max_norm / norm
    return Gradients(
        w_hh=grads.w_hh * scale, w_ih=grads.w_ih * scale, a=grads.a * scale
    )


def hard_emissions(logits, gumbels):
    """Gumbel-max categorical samples: argmax(y + g) along the last axis."""
    return np.argmax(np.asarray(logits) + np.asarray(gumbels), axis=-1)
