"""Latent-dynamics analyses of trained networks.

Covers the autonomous side (fixed-point settling, Jacobian linearization,
Cayley/Mobius spectral mapping) and the driven side (orbit-radius scaling,
residency-time zone segmentation, noise-sensitivity probes, the second-order
perturbation vector, and per-checkpoint learning-trajectory sweeps).

Conventions: post-activation states are row vectors, so one autonomous step
linearizes as ``dh_t = dh_{t-1} J`` with ``J = W_hh^T D`` and
``D = diag(1[z > 0])``.  The Mobius map here is ``(lam - 1)/(lam + 1)``,
which sends contraction (|lam| < 1) to negative real part.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import backend
from .errors import DataError, DimensionError, ParameterError, PoleError
from .numerics import PcaBasis, eig, linear_fit, pca_fit, pca_project
from .rnn import rollout_many

__all__ = [
    "FixedPointReport",
    "ZoneMap",
    "PerturbationVector",
    "OrbitScan",
    "NoiseProbe",
    "find_fixed_points",
    "jacobian_at",
    "mobius",
    "orbit_radius_scan",
    "residency_map",
    "classify_zones",
    "noise_sensitivity",
    "second_order_perturbation",
    "epoch_sweep",
    "pair_subspace_pca",
]

ZONE_CLUSTER = "cluster"
ZONE_KICK = "kick"
ZONE_TRANSITION = "transition"


@dataclass
class FixedPointReport:
    """Merged fixed-point candidates of the autonomous dynamics."""

    points: np.ndarray  # (P, H) merged representatives
    residuals: np.ndarray  # (P,) ||relu(p W^T) - p||
    member_counts: np.ndarray  # (P,) converged inits per representative
    spectra: list  # per-point eigenvalues, descending modulus
    n_inits: int
    converged: int
    non_converged_diffs: np.ndarray
    tol: float
    max_steps: int
    merge_radius: float

    @property
    def count(self):
        return self.points.shape[0]

    def dominant_point(self):
        """Representative with the most converged members, or None."""
        if self.count == 0:
            return None
        return self.points[int(np.argmax(self.member_counts))]

    def dominant_spectrum(self):
        if self.count == 0:
            return None
        return self.spectra[int(np.argmax(self.member_counts))]


def find_fixed_points(params, n_inits=100, max_steps=10_000, tol=1e-9,
                      merge_radius=None, init_sigma=1.0, stream=None,
                      settle_after=1500, chunk=250):
    """Settle autonomous rollouts from Gaussian initial states.

    A trajectory is converged once its one-step change drops below ``tol``;
    the batch then settles ``settle_after`` further synchronized steps, which
    contracts all converged endpoints onto their common limit (so merging is
    scale-free) while staying far above floating-point underflow, keeping the
    endpoint's gate pattern meaningful for the Jacobian.  Converged endpoints
    within ``merge_radius`` (default 10*tol) of each other merge transitively
    into one representative.  Non-converged inits are reported, not raised.
    """
    if stream is None:
        raise ParameterError("find_fixed_points requires an RngStream")
    if n_inits < 1:
        raise ParameterError("n_inits must be >= 1")
    if merge_radius is None:
        merge_radius = 10.0 * tol
    inits = np.ascontiguousarray(stream.gaussian((n_inits, params.hidden_size), sigma=init_sigma))
    finals = inits
    steps_done = 0
    last_diff = np.full(n_inits, np.inf)
    while steps_done < max_steps:
        n = min(chunk, max_steps - steps_done)
        finals, last_diff = backend.settle_autonomous(params.w_hh, finals, int(n))
        steps_done += n
        if np.all(last_diff < tol):
            extra = min(settle_after, max_steps - steps_done)
            if extra > 0:
                finals, last_diff = backend.settle_autonomous(params.w_hh, finals, int(extra))
            break
    ok = last_diff < tol
    candidates = finals[ok]
    # transitive merge (union-find over the candidate set)
    parent = list(range(candidates.shape[0]))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(candidates.shape[0]):
        for j in range(i + 1, candidates.shape[0]):
            if np.linalg.norm(candidates[i] - candidates[j]) <= merge_radius:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[rj] = ri
    groups = {}
    for i in range(candidates.shape[0]):
        groups.setdefault(find(i), []).append(i)
    points = []
    counts = []
    for members in groups.values():
        points.append(candidates[members].mean(axis=0))
        counts.append(len(members))
    order = np.argsort(counts)[::-1]
    points = [points[i] for i in order]
    counts = [counts[i] for i in order]
    residuals = []
    spectra = []
    for p in points:
        z = p @ params.w_hh.T
        residuals.append(float(np.linalg.norm(np.maximum(z, 0.0) - p)))
        spectra.append(eig(jacobian_at(params, z)))
    return FixedPointReport(
        points=np.array(points).reshape(len(points), params.hidden_size),
        residuals=np.array(residuals),
        member_counts=np.array(counts, dtype=np.int64),
        spectra=spectra,
        n_inits=n_inits,
        converged=int(ok.sum()),
        non_converged_diffs=last_diff[~ok],
        tol=tol,
        max_steps=int(max_steps),
        merge_radius=merge_radius,
    )


def jacobian_at(params, z):
    """One-step Jacobian ``J = W_hh^T D`` at pre-activation ``z``.

    Propagates row-vector perturbations: ``dh_t = dh_{t-1} J``.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (params.hidden_size,):
        raise DimensionError(f"z must have shape ({params.hidden_size},)")
    gate = (z > 0.0).astype(np.float64)
    return params.w_hh.T * gate[None, :]


def mobius(lam):
    """Conformal map ``(lam - 1) / (lam + 1)``: unit circle -> imaginary axis.

    Contraction maps to negative real part, expansion to positive; the pole
    sits at -1.
    """
    lam = np.asarray(lam, dtype=np.complex128)
    if np.any(lam == -1.0):
        raise PoleError("mobius is undefined at lambda = -1")
    out = (lam - 1.0) / (lam + 1.0)
    if out.ndim == 0:
        return complex(out)
    return out


@dataclass
class OrbitScan:
    """Orbit radius versus input variance, with the least-squares line."""

    sigma2: np.ndarray
    radius: np.ndarray
    slope: float
    intercept: float
    r_squared: float
    basis: PcaBasis


def orbit_radius_scan(params, sigma2_grid, t_len=5000, burn_in=200, stream=None,
                      tau=1.0):
    """Noisy rollouts across an input-variance grid, radius measured in a
    common PCA plane.

    The plane is fit on the run at variance 1 when present (the largest grid
    value otherwise); the radius of each run is the mean distance of its
    post-burn-in projected states from their centroid.
    """
    if stream is None:
        raise ParameterError("orbit_radius_scan requires an RngStream")
    grid = [float(v) for v in sigma2_grid]
    if not grid:
        raise ParameterError("sigma2_grid must be nonempty")
    if t_len < burn_in + 1000:
        raise ParameterError("t_len must be at least burn_in + 1000")
    states = {}
    for i, s2 in enumerate(grid):
        x = stream.child(i).gaussian((1, t_len, params.input_size), sigma=float(np.sqrt(s2)))
        _, h, _, _ = rollout_many(params, x, tau=tau)
        states[s2] = h[0, burn_in:, :]
    basis_key = 1.0 if 1.0 in states else max(states)
    basis = pca_fit(states[basis_key], 2)
    radii = []
    for s2 in grid:
        coords = pca_project(basis, states[s2])
        center = coords.mean(axis=0)
        radii.append(float(np.mean(np.linalg.norm(coords - center, axis=1))))
    slope, intercept, r2 = linear_fit(np.array(grid), np.array(radii))
    return OrbitScan(
        sigma2=np.array(grid),
        radius=np.array(radii),
        slope=slope,
        intercept=intercept,
        r_squared=r2,
        basis=basis,
    )


@dataclass
class ZoneMap:
    """Residency statistics for states sampled from a long noisy rollout."""

    states: np.ndarray  # (S, H) sampled hidden states
    z: np.ndarray  # (S, H) their pre-activations
    time_index: np.ndarray  # (S,) positions in the base rollout
    residency: np.ndarray  # (S,) mean steps to a dominant-logit change (capped)
    sign_changes: np.ndarray  # (S,) mean sign flips of the dominant logit's slope
    unstable: np.ndarray  # (S,) count of |eigenvalue| > 1 at the state
    dominant: np.ndarray  # (S,) dominant logit index at sampling time
    cap: int
    rollouts_per_state: int
    base_dominant: np.ndarray = None  # (burn_in + rollout_len,) timeline
    labels: Optional[list] = None
    thresholds: dict = field(default_factory=dict)

    @property
    def n_states(self):
        return self.states.shape[0]


def residency_map(params, rollout_len=10_000, n_samples=2000, rollouts_per_state=32,
                  cap=50, burn_in=200, sigma=1.0, stream=None, tau=1.0):
    """Sample states from a long noisy rollout and measure their residency.

    Residency time is the mean number of steps, over independent noisy
    rollouts from the state, until the dominant logit index changes (capped);
    the sign-change count tracks slope flips of the dominant logit's value
    before that change; the unstable count is the number of local Jacobian
    eigenvalues outside the unit circle.
    """
    if stream is None:
        raise ParameterError("residency_map requires an RngStream")
    if n_samples < 1 or rollouts_per_state < 1:
        raise ParameterError("n_samples and rollouts_per_state must be >= 1")
    d = params.input_size
    total = burn_in + rollout_len
    x = stream.child(0).gaussian((1, total, d), sigma=sigma)
    z_base, h_base, y_base, _ = rollout_many(params, x, tau=tau)
    pick = stream.child(1).uniform(n_samples)
    idx = burn_in + np.minimum((pick * rollout_len).astype(np.int64), rollout_len - 1)
    states = h_base[0, idx, :]
    z_states = z_base[0, idx, :]
    dominant = np.argmax(y_base[0, idx, :], axis=1)
    v0 = y_base[0, idx, :][np.arange(n_samples), dominant]

    residency = np.empty(n_samples)
    sign_changes = np.empty(n_samples)
    unstable = np.empty(n_samples, dtype=np.int64)
    probe_root = stream.child(2)
    r = rollouts_per_state
    for s in range(n_samples):
        child = probe_root.child(s)
        xs = child.gaussian((r, cap, d), sigma=sigma)
        h0 = np.repeat(states[s][None, :], r, axis=0)
        _, _, ys, _ = rollout_many(params, xs, tau=tau, h0=h0)
        dom = np.argmax(ys, axis=2)
        changed = dom != dominant[s]
        any_change = changed.any(axis=1)
        first = np.where(any_change, changed.argmax(axis=1) + 1, cap)
        residency[s] = float(np.minimum(first, cap).mean())
        # slope flips of the initial dominant logit's value, up to the change
        v = np.concatenate([np.full((r, 1), v0[s]), ys[:, :, dominant[s]]], axis=1)
        dv = np.diff(v, axis=1)
        sgn = np.sign(dv)
        flips = (sgn[:, 1:] * sgn[:, :-1]) < 0
        pos = np.arange(cap - 1)[None, :]
        limit = np.where(any_change, first - 2, cap - 2)
        flips = np.where(pos <= limit[:, None], flips, False)
        sign_changes[s] = float(flips.sum(axis=1).mean())
        lam = eig(jacobian_at(params, z_states[s]))
        unstable[s] = int(np.sum(np.abs(lam) > 1.0))
    return ZoneMap(
        states=states,
        z=z_states,
        time_index=idx,
        residency=residency,
        sign_changes=sign_changes,
        unstable=unstable,
        dominant=dominant,
        cap=cap,
        rollouts_per_state=r,
        base_dominant=np.argmax(y_base[0], axis=1),
    )


def classify_zones(zm, cluster_rt=8.0, transition_rt=2.0):
    """Label sampled states by residency time.

    Defaults: residency above ``cluster_rt`` is a cluster, below
    ``transition_rt`` a transition, anything between a kick-zone.  Returns a
    new ZoneMap with labels attached.
    """
    labels = []
    for rt in zm.residency:
        if rt > cluster_rt:
            labels.append(ZONE_CLUSTER)
        elif rt < transition_rt:
            labels.append(ZONE_TRANSITION)
        else:
            labels.append(ZONE_KICK)
    return ZoneMap(
        states=zm.states,
        z=zm.z,
        time_index=zm.time_index,
        residency=zm.residency,
        sign_changes=zm.sign_changes,
        unstable=zm.unstable,
        dominant=zm.dominant,
        cap=zm.cap,
        rollouts_per_state=zm.rollouts_per_state,
        base_dominant=zm.base_dominant,
        labels=labels,
        thresholds={"cluster_rt": cluster_rt, "transition_rt": transition_rt},
    )


@dataclass
class NoiseProbe:
    """Trajectory bundle from one initial state under partial noise resampling."""

    trajectories: np.ndarray  # (n, T, H)
    cov_trace: np.ndarray  # (T,)
    mean_distance: np.ndarray  # (T,)
    gamma: float


def noise_sensitivity(params, ic, gamma, n_traj=30, t_len=60, sigma=1.0, stream=None,
                      tau=1.0):
    """Trajectories from a shared state under gamma-resampled input noise.

    All trajectories share a reference input draw; at each step each
    trajectory independently replaces that step's input vector with a fresh
    draw with probability ``gamma``.  Dispersion is summarized by the trace
    of the per-timestep state covariance and by the mean distance to the mean
    trajectory; both are exactly zero when ``gamma`` is zero.
    """
    if stream is None:
        raise ParameterError("noise_sensitivity requires an RngStream")
    if n_traj < 2:
        raise ParameterError("n_traj must be >= 2")
    if not 0.0 <= gamma <= 1.0:
        raise ParameterError("gamma must lie in [0, 1]")
    d = params.input_size
    ref = stream.child(0).gaussian((t_len, d), sigma=sigma)
    x = np.repeat(ref[None, :, :], n_traj, axis=0)
    if gamma > 0.0:
        mask_stream = stream.child(1)
        fresh_stream = stream.child(2)
        mask = mask_stream.uniform((n_traj, t_len)) < gamma
        fresh = fresh_stream.gaussian((n_traj, t_len, d), sigma=sigma)
        x = np.where(mask[:, :, None], fresh, x)
    h0 = np.repeat(np.asarray(ic, dtype=np.float64)[None, :], n_traj, axis=0)
    _, h, _, _ = rollout_many(params, np.ascontiguousarray(x), tau=tau, h0=h0)
    # center on trajectory 0 so identical bundles give exact zeros
    dev = h - h[0]
    dev_mean = dev.mean(axis=0)
    centered = dev - dev_mean
    cov_trace = (centered**2).sum(axis=2).mean(axis=0)
    mean_distance = np.linalg.norm(centered, axis=2).mean(axis=0)
    return NoiseProbe(
        trajectories=h,
        cov_trace=cov_trace,
        mean_distance=mean_distance,
        gamma=float(gamma),
    )


@dataclass
class PerturbationVector:
    """Mean second-order response of the autonomous dynamics to input noise."""

    vector: np.ndarray  # (H,) E[dh^(2)] at the horizon
    sigma2: float
    horizon: int
    n_traj: int

    @property
    def norm(self):
        return float(np.linalg.norm(self.vector))


def second_order_perturbation(params, sigma2, ref_point, horizon=10, n_traj=100,
                              stream=None):
    """Propagate first-order input perturbations around a fixed point and
    accumulate their gated second-order effect.

    ``ref_point`` is the (post-activation) fixed point; its pre-activation
    fixes the gate pattern.  First-order terms evolve through the gated
    recurrence driven by fresh Gaussian inputs of variance ``sigma2``; where
    the reference pre-activation is negative, half the squared first-order
    term is injected through the recurrent weights.  The returned vector
    averages the accumulated term over ``n_traj`` trajectories at the
    horizon.
    """
    if stream is None:
        raise ParameterError("second_order_perturbation requires an RngStream")
    ref = np.asarray(ref_point, dtype=np.float64)
    if ref.shape != (params.hidden_size,):
        raise DimensionError(f"ref_point must have shape ({params.hidden_size},)")
    z_ref = ref @ params.w_hh.T
    gate = (z_ref > 0.0).astype(np.float64)
    f_mask = (z_ref < 0.0).astype(np.float64)
    sigma = float(np.sqrt(sigma2))
    x = stream.gaussian((n_traj, horizon, params.input_size), sigma=sigma)
    dh1 = np.zeros((n_traj, params.hidden_size))
    dh2 = np.zeros((n_traj, params.hidden_size))
    for t in range(horizon):
        drive = 0.5 * ((dh1**2) * f_mask) @ params.w_hh.T
        dh2 = (dh2 * gate) @ params.w_hh.T + drive
        dh1 = (dh1 * gate) @ params.w_hh.T + x[:, t, :] @ params.w_ih.T
    return PerturbationVector(
        vector=dh2.mean(axis=0),
        sigma2=float(sigma2),
        horizon=int(horizon),
        n_traj=int(n_traj),
    )


def transition_rate(params, rate_len=10_000, burn_in=200, sigma=1.0, stream=None,
                    tau=1.0):
    """Dominant-logit change frequency per step over a long noisy rollout."""
    if stream is None:
        raise ParameterError("transition_rate requires an RngStream")
    x = stream.gaussian((1, burn_in + rate_len, params.input_size), sigma=sigma)
    _, _, y, _ = rollout_many(params, x, tau=tau)
    dom = np.argmax(y[0, burn_in:, :], axis=1)
    return float(np.mean(dom[1:] != dom[:-1]))


def spectral_fractions(params, n_states=40, rollout_len=2000, burn_in=200,
                       sigma=1.0, stream=None, imag_tol=1e-9):
    """Mean fractions of expanding and rotational Jacobian eigenvalues over
    states visited by a noisy rollout (the network's operating regime)."""
    if stream is None:
        raise ParameterError("spectral_fractions requires an RngStream")
    x = stream.child(0).gaussian((1, burn_in + rollout_len, params.input_size), sigma=sigma)
    z_all, _, _, _ = rollout_many(params, x)
    pick = stream.child(1).uniform(n_states)
    idx = burn_in + np.minimum((pick * rollout_len).astype(np.int64), rollout_len - 1)
    unstable = []
    rotational = []
    for i in idx:
        lam = eig(jacobian_at(params, z_all[0, i, :]))
        unstable.append(float(np.mean(np.abs(lam) > 1.0)))
        rotational.append(float(np.mean(np.abs(lam.imag) > imag_tol)))
    return float(np.mean(unstable)), float(np.mean(rotational))


def epoch_sweep(checkpoints, stream=None, n_inits=20, max_steps=10_000, tol=1e-9,
                rate_len=10_000, burn_in=200, sigma2=1.0, horizon=10, n_traj=100,
                n_spectral_states=40):
    """Per-checkpoint summary of the training trajectory.

    For each checkpoint: the cluster-transition rate under noise; fractions
    of expanding (|lam| > 1) and rotational (complex) Jacobian eigenvalues
    over states visited under noise -- the operating regime where kick-zone
    instabilities live (the settled fixed point's own spectrum is reported
    alongside, but the autonomous flow of a bias-free ReLU network decays
    along a necessarily contracting ray, so the at-fixed-point unstable
    fraction stays zero by construction); and the norm of the second-order
    perturbation vector anchored at the settled fixed point.  A missing
    fixed point flags the row instead of failing.
    """
    if stream is None:
        raise ParameterError("epoch_sweep requires an RngStream")
    if len(checkpoints) < 2:
        raise ParameterError("epoch_sweep needs at least 2 checkpoints")
    rows = []
    for i, ckpt in enumerate(checkpoints):
        params = ckpt.params
        child = stream.child(i)
        rate = transition_rate(
            params, rate_len=rate_len, burn_in=burn_in,
            sigma=float(np.sqrt(sigma2)), stream=child.child(0),
        )
        unstable_frac, complex_frac = spectral_fractions(
            params, n_states=n_spectral_states, sigma=float(np.sqrt(sigma2)),
            stream=child.child(3),
        )
        fp = find_fixed_points(
            params, n_inits=n_inits, max_steps=max_steps, tol=tol,
            stream=child.child(1),
        )
        row = {
            "epoch": ckpt.epoch,
            "transition_rate": rate,
            "unstable_frac": unstable_frac,
            "complex_frac": complex_frac,
            "fp_found": fp.count > 0,
            "fp_count": fp.count,
            "fp_converged": fp.converged,
        }
        if fp.count > 0:
            point = fp.dominant_point()
            lam = fp.dominant_spectrum()
            row["fp_unstable_frac"] = float(np.mean(np.abs(lam) > 1.0))
            row["fp_complex_frac"] = float(np.mean(np.abs(lam.imag) > 1e-9))
            pv = second_order_perturbation(
                params, sigma2, point, horizon=horizon, n_traj=n_traj,
                stream=child.child(2),
            )
            row["dh2_norm"] = pv.norm
        else:
            row["fp_unstable_frac"] = float("nan")
            row["fp_complex_frac"] = float("nan")
            row["dh2_norm"] = float("nan")
        rows.append(row)
    return rows


def epoch_sweep_csv(rows):
    header = ("epoch,transition_rate,unstable_frac,complex_frac,dh2_norm,"
              "fp_unstable_frac,fp_complex_frac,fp_found,fp_count,fp_converged")
    lines = [header]
    for r in rows:
        lines.append(
            f"{r['epoch']},{r['transition_rate']!r},{r['unstable_frac']!r},"
            f"{r['complex_frac']!r},{r['dh2_norm']!r},{r['fp_unstable_frac']!r},"
            f"{r['fp_complex_frac']!r},{int(r['fp_found'])},"
            f"{r['fp_count']},{r['fp_converged']}"
        )
    return "\n".join(lines) + "\n"


def pair_subspace_pca(states, labels, pair):
    """Second-level PCA restricted to two clusters and their passages.

    ``labels`` assigns a cluster id per timestep (negative for unlabeled
    steps).  Steps labeled with either member of ``pair`` are kept, as are
    unlabeled gaps whose flanking clusters are exactly the pair.  Returns
    ``(basis, coords, kept_indices)``.
    """
    states = np.asarray(states, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if states.shape[0] != labels.shape[0]:
        raise DimensionError("states and labels must align")
    a, b = pair
    present = set(labels[labels >= 0].tolist())
    if a not in present or b not in present:
        raise DataError(f"clusters {pair} not both present in labels")
    keep = np.zeros(labels.shape[0], dtype=bool)
    keep |= (labels == a) | (labels == b)
    labeled_idx = np.nonzero(labels >= 0)[0]
    for k in range(labeled_idx.size - 1):
        i, j = labeled_idx[k], labeled_idx[k + 1]
        if j > i + 1 and {labels[i], labels[j]} == {a, b}:
            keep[i + 1 : j] = True
    sel = np.nonzero(keep)[0]
    if sel.size < 2:
        raise DataError("restriction to the cluster pair is (nearly) empty")
    basis = pca_fit(states[sel], 2)
    coords = pca_project(basis, states[sel])
    return basis, coords, sel
