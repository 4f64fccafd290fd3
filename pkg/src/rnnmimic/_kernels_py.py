"""Pure-numpy implementations of the hot recurrent kernels.

The compiled extension (``rnnmimic._kernels``) exposes the same three
functions with identical semantics; ``rnnmimic.backend`` picks whichever is
available at import time.  All arrays are float64, C-contiguous, with the
row-vector convention ``z_t = h_{t-1} W_hh^T + x_t W_ih^T``.
"""

import numpy as np

BACKEND_NAME = "python"


def rollout_batch(w_hh, w_ih, a, x, g, tau, h0, act_scale=None):
    """Run a batch of rollouts for ``T`` steps.

    Parameters
    ----------
    w_hh, w_ih, a : (H,H), (H,d), (3,H) weight matrices.
    x : (B,T,d) inputs.
    g : (B,T,3) Gumbel draws (zeros for deterministic rollouts).
    tau : softmax temperature, > 0.
    h0 : (B,H) initial hidden states.
    act_scale : optional (H,) per-unit multiplier applied after the ReLU
        (activity interventions); ``None`` means no scaling.

    Returns
    -------
    z, h, y, s : pre-activations (B,T,H), hidden states (B,T,H),
        logits (B,T,3), soft samples (B,T,3).
    """
    B, T, _ = x.shape
    H = w_hh.shape[0]
    z = np.empty((B, T, H))
    h = np.empty((B, T, H))
    y = np.empty((B, T, 3))
    s = np.empty((B, T, 3))
    h_prev = h0
    for t in range(T):
        zt = h_prev @ w_hh.T + x[:, t, :] @ w_ih.T
        ht = np.maximum(zt, 0.0)
        if act_scale is not None:
            ht = ht * act_scale
        yt = ht @ a.T
        u = (yt + g[:, t, :]) / tau
        u = u - u.max(axis=1, keepdims=True)
        e = np.exp(u)
        st = e / e.sum(axis=1, keepdims=True)
        z[:, t, :] = zt
        h[:, t, :] = ht
        y[:, t, :] = yt
        s[:, t, :] = st
        h_prev = ht
    return z, h, y, s


def bptt_batch(w_hh, w_ih, a, x, h0, z, h, s, dl_ds, tau):
    """Reverse-mode gradients of a stored (unscaled) rollout.

    ``dl_ds`` is the loss gradient with respect to the soft samples,
    shape (B,T,3).  Returns ``(dw_hh, dw_ih, da)`` summed over the batch
    in fixed order.
    """
    B, T, _ = x.shape
    H = w_hh.shape[0]
    dw_hh = np.zeros((H, H))
    dw_ih = np.zeros((H, w_ih.shape[1]))
    da = np.zeros((3, H))
    dh_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        st = s[:, t, :]
        dl = dl_ds[:, t, :]
        dot = (dl * st).sum(axis=1, keepdims=True)
        dy = st * (dl - dot) / tau
        ht = h[:, t, :]
        da += dy.T @ ht
        dh = dy @ a + dh_next
        dz = np.where(z[:, t, :] > 0.0, dh, 0.0)
        h_prev = h0 if t == 0 else h[:, t - 1, :]
        dw_hh += dz.T @ h_prev
        dw_ih += dz.T @ x[:, t, :]
        dh_next = dz @ w_hh
    return dw_hh, dw_ih, da


def settle_autonomous(w_hh, h0, n_steps):
    """Iterate ``h <- relu(h W_hh^T)`` for ``n_steps`` without storing the path.

    Returns the final states (B,H) and the norm of the last step's change
    per trajectory (B,).
    """
    h = np.array(h0, copy=True)
    last = np.zeros(h.shape[0])
    for _ in range(n_steps):
        h_new = np.maximum(h @ w_hh.T, 0.0)
        last = np.linalg.norm(h_new - h, axis=1)
        h = h_new
    return h, last
