"""Single-neuron and connectivity analyses of trained networks.

Finds the small groups whose pre-activations rise from negative (inside a
cluster) to positive (during a transition) and sit among the top components
of the second-order perturbation vector ("kick" groups, one per transition
direction), scores the remaining units by their net drive onto those groups
("noise-integrating" populations), and validates the circuit causally by
scaling either the groups' activity or the populations' input rows.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import ZONE_CLUSTER, ZONE_TRANSITION, eig, jacobian_at
from .errors import (
    DataError,
    DimensionError,
    InterventionSpecError,
    ParameterError,
)
from .rnn import RnnParams, rollout_many

__all__ = [
    "NeuronGroups",
    "InterventionSpec",
    "InterventionResult",
    "detect_kick_neurons",
    "detect_populations",
    "connectivity_report",
    "intervene",
    "critical_pairs",
    "oscillation_traces",
    "readout_alignment",
    "control_set",
]


@dataclass
class NeuronGroups:
    """Kick groups (one per transition direction) and integrating populations."""

    kick_groups: list  # list of int arrays, sorted by size descending
    directions: list  # (source logit, destination logit) per kick group
    populations: list  # two int arrays split by drive sign, possibly empty
    residual: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for g in self.kick_groups:
            s = set(int(i) for i in g)
            if s & seen:
                raise DataError("kick groups must be pairwise disjoint")
            seen |= s
        seen = set()
        for p in self.populations:
            s = set(int(i) for i in p)
            if s & seen:
                raise DataError("populations must be pairwise disjoint")
            seen |= s

    def all_kick(self):
        if not self.kick_groups:
            return np.array([], dtype=np.int64)
        return np.concatenate(self.kick_groups)

    def all_populations(self):
        if not self.populations:
            return np.array([], dtype=np.int64)
        return np.concatenate(self.populations)


def _residence_segments(dominant, min_run):
    """Maximal constant runs of the dominant-logit series of length > min_run."""
    segments = []
    start = 0
    n = dominant.shape[0]
    for t in range(1, n + 1):
        if t == n or dominant[t] != dominant[start]:
            if t - start > min_run:
                segments.append((start, t, int(dominant[start])))
            start = t
    return segments


def detect_kick_neurons(params, zm, dh2, top_q=0.10, theta_gap=None):
    """Kick candidates from zone-resolved pre-activation statistics.

    A neuron joins the candidate set of transition direction a->b when its
    mean pre-activation over that direction's transition samples exceeds its
    mean over cluster-a samples by more than ``theta_gap`` (default: one
    standard deviation of the pooled sampled pre-activations), its cluster-a
    mean is negative, and it ranks in the top ``top_q`` fraction of the
    second-order perturbation vector by magnitude.  Neurons qualifying for
    several directions keep the largest gap.  Returns groups sorted by size;
    empty groups are a valid outcome.
    """
    if zm.labels is None:
        raise DataError("zone map must be classified before kick detection")
    h = params.hidden_size
    labels = np.asarray(zm.labels)
    z = zm.z
    if theta_gap is None:
        theta_gap = float(z.std())
    k_top = max(1, int(np.ceil(top_q * h)))
    dh2_order = np.argsort(-np.abs(dh2.vector), kind="stable")
    top_set = set(int(i) for i in dh2_order[:k_top])

    min_run = float(zm.thresholds.get("cluster_rt", 8.0))
    segments = _residence_segments(zm.base_dominant, min_run)
    starts = np.array([s[0] for s in segments], dtype=np.int64)

    cluster_mask = labels == ZONE_CLUSTER
    trans_mask = labels == ZONE_TRANSITION
    cluster_mean_z = {}
    for logit in np.unique(zm.dominant[cluster_mask]):
        sel = cluster_mask & (zm.dominant == logit)
        cluster_mean_z[int(logit)] = z[sel].mean(axis=0)

    # a transition sample's direction: the logits of the residence segments
    # bracketing it in time (source = containing-or-preceding, destination =
    # next); samples outside any bracket are skipped
    trans_by_dir = {}
    n_directed = 0
    for i in np.nonzero(trans_mask)[0]:
        t = zm.time_index[i]
        k = int(np.searchsorted(starts, t, side="right")) - 1
        if k < 0 or k + 1 >= len(segments):
            continue
        a = segments[k][2]
        b = segments[k + 1][2]
        if a != b:
            trans_by_dir.setdefault((a, b), []).append(i)
            n_directed += 1

    best = {}
    for (a, b), idx in sorted(trans_by_dir.items()):
        if a not in cluster_mean_z:
            continue
        mz_trans = z[idx].mean(axis=0)
        mz_cluster = cluster_mean_z[a]
        gaps = mz_trans - mz_cluster
        for n in range(h):
            if gaps[n] > theta_gap and mz_cluster[n] < 0.0 and n in top_set:
                if n not in best or gaps[n] > best[n][1]:
                    best[n] = ((a, b), gaps[n])
    grouped = {}
    for n, (direction, _) in best.items():
        grouped.setdefault(direction, []).append(n)
    items = sorted(grouped.items(), key=lambda kv: (-len(kv[1]), kv[0]))
    kick_groups = [np.array(sorted(v), dtype=np.int64) for _, v in items]
    directions = [k for k, _ in items]
    return NeuronGroups(
        kick_groups=kick_groups,
        directions=directions,
        populations=[],
        residual=np.setdiff1d(np.arange(h), np.concatenate(kick_groups) if kick_groups else []),
        meta={"theta_gap": theta_gap, "top_q": top_q, "n_directed_samples": n_directed},
    )


def detect_populations(params, groups, threshold_sd=1.0):
    """Split non-kick units by their net recurrent drive onto the two
    largest kick groups.

    Score s(n) sums W_hh rows of the first group at column n minus the
    second group's; units with |s| above ``threshold_sd`` standard deviations
    of the score distribution form two populations by sign.
    """
    if len(groups.kick_groups) < 2:
        raise DataError("population detection needs at least two kick groups")
    h = params.hidden_size
    kick1, kick2 = groups.kick_groups[0], groups.kick_groups[1]
    non_kick = np.setdiff1d(np.arange(h), groups.all_kick())
    scores = params.w_hh[kick1][:, non_kick].sum(axis=0) - params.w_hh[kick2][
        :, non_kick
    ].sum(axis=0)
    sd = float(scores.std())
    if sd == 0.0:
        pops = [np.array([], dtype=np.int64), np.array([], dtype=np.int64)]
    else:
        theta = threshold_sd * sd
        pops = [
            non_kick[scores > theta].astype(np.int64),
            non_kick[scores < -theta].astype(np.int64),
        ]
    residual = np.setdiff1d(non_kick, np.concatenate(pops) if pops else [])
    return NeuronGroups(
        kick_groups=groups.kick_groups,
        directions=groups.directions,
        populations=pops,
        residual=residual,
        meta={**groups.meta, "population_threshold_sd": threshold_sd},
    )


def _block_mean(w, rows, cols, exclude_diag=False):
    if len(rows) == 0 or len(cols) == 0:
        return float("nan")
    block = w[np.ix_(rows, cols)]
    if exclude_diag and np.array_equal(rows, cols):
        if len(rows) < 2:
            return float("nan")
        mask = ~np.eye(len(rows), dtype=bool)
        return float(block[mask].mean())
    return float(block.mean())


def connectivity_report(params, groups):
    """Submatrices and block means of the recurrent weights for the circuit.

    Covers (i) the kick x kick submatrix, (ii) population -> kick weights
    (sorted per population), and (iii) the population x population
    submatrix; block means summarize within/cross structure.
    """
    if not groups.kick_groups:
        raise DataError("connectivity report needs nonempty kick groups")
    w = params.w_hh
    kick_all = groups.all_kick()
    report = {
        "kick_indices": [g.tolist() for g in groups.kick_groups],
        "directions": [list(d) for d in groups.directions],
        "kick_submatrix": w[np.ix_(kick_all, kick_all)].tolist(),
        "population_sizes": [int(p.size) for p in groups.populations],
    }
    means = {}
    for gi, g in enumerate(groups.kick_groups):
        for gj, g2 in enumerate(groups.kick_groups):
            # drive from group gj onto group gi sits in rows gi, columns gj
            means[f"kick{gi}<-kick{gj}"] = _block_mean(
                w, g, g2, exclude_diag=(gi == gj)
            )
    pop_to_kick = {}
    for pi, pop in enumerate(groups.populations):
        for gi, g in enumerate(groups.kick_groups):
            key = f"kick{gi}<-pop{pi}"
            means[key] = _block_mean(w, g, pop)
            if pop.size:
                weights = w[np.ix_(g, pop)].mean(axis=0)
                pop_to_kick[key] = np.sort(weights)[::-1].tolist()
    for pi, pop in enumerate(groups.populations):
        for pj, pop2 in enumerate(groups.populations):
            means[f"pop{pi}<-pop{pj}"] = _block_mean(
                w, pop, pop2, exclude_diag=(pi == pj)
            )
    if len(groups.populations) >= 2:
        pops_all = groups.all_populations()
        report["population_submatrix_shape"] = [int(pops_all.size)] * 2
    report["population_to_kick_sorted"] = pop_to_kick
    report["block_means"] = means
    return report


@dataclass
class InterventionSpec:
    """One scaling intervention: which neurons, which pathway, what factor."""

    neurons: np.ndarray
    mode: str  # 'activity' (post-ReLU scaling) or 'noise_drive' (W_ih rows)
    mu: float
    horizon: int
    h0: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        self.neurons = np.asarray(self.neurons, dtype=np.int64)
        if self.mode not in ("activity", "noise_drive"):
            raise InterventionSpecError(f"unknown intervention mode {self.mode!r}")
        if not np.isfinite(self.mu) or self.mu < 0:
            raise InterventionSpecError("mu must be finite and >= 0")
        if self.horizon < 1:
            raise InterventionSpecError("horizon must be >= 1")
        self.h0 = np.asarray(self.h0, dtype=np.float64)


@dataclass
class InterventionResult:
    """Trajectory and outcome statistics of one intervention run."""

    h: np.ndarray  # (T, H)
    z: np.ndarray  # (T, H)
    logits: np.ndarray  # (T, 3)
    dominant: np.ndarray  # (T,)
    transition_count: int
    cluster_sequence: list  # run-length compressed dominant sequence
    mu: float
    mode: str


def _merge_specs(specs):
    if isinstance(specs, InterventionSpec):
        specs = [specs]
    if not specs:
        raise InterventionSpecError("at least one intervention spec is required")
    by_mode = {"activity": set(), "noise_drive": set()}
    for s in specs:
        by_mode[s.mode] |= set(int(i) for i in s.neurons)
    overlap = by_mode["activity"] & by_mode["noise_drive"]
    if overlap:
        raise InterventionSpecError(
            f"neurons {sorted(overlap)} targeted by both modes at once"
        )
    base = specs[0]
    for s in specs[1:]:
        if s.horizon != base.horizon or not np.array_equal(s.h0, base.h0):
            raise InterventionSpecError("combined specs must share horizon and h0")
    return specs


def intervene(params, specs, stream, tau=1.0):
    """Run a rollout under one or more scaling interventions.

    Activity mode multiplies the post-ReLU activity of the target neurons by
    mu at every step; noise-drive mode scales the target rows of the input
    weights.  mu = 1 reproduces the unperturbed trajectory bit-exactly.
    Outcome statistics count dominant-logit changes and compress the visited
    dominant sequence.
    """
    specs = _merge_specs(specs)
    base = specs[0]
    h = params.hidden_size
    act_scale = np.ones(h)
    w_ih = params.w_ih
    for s in specs:
        if s.neurons.size and (s.neurons.min() < 0 or s.neurons.max() >= h):
            raise DimensionError("intervention neuron indices out of range")
        if s.mode == "activity":
            act_scale[s.neurons] *= s.mu
        else:
            w_ih = w_ih.copy()
            w_ih[s.neurons, :] *= s.mu
    eff = RnnParams(w_hh=params.w_hh, w_ih=w_ih, a=params.a)
    x = stream.gaussian((1, base.horizon, params.input_size), sigma=base.sigma)
    z, hs, y, _ = rollout_many(eff, x, tau=tau, h0=base.h0[None, :], act_scale=act_scale)
    dominant = np.argmax(y[0], axis=1)
    changes = dominant[1:] != dominant[:-1]
    compressed = [int(dominant[0])]
    for t in range(1, dominant.size):
        if dominant[t] != compressed[-1]:
            compressed.append(int(dominant[t]))
    return InterventionResult(
        h=hs[0],
        z=z[0],
        logits=y[0],
        dominant=dominant,
        transition_count=int(changes.sum()),
        cluster_sequence=compressed,
        mu=base.mu,
        mode=base.mode,
    )


def critical_pairs(params, z_states, mu=1.0, target=None, mode="activity",
                   band_delta=0.05, imag_tol=1e-9):
    """Mean and sd count of near-unit complex-conjugate eigenvalue pairs.

    At each supplied pre-activation state the one-step Jacobian is formed
    under the intervention (activity scaling enters the gate diagonal); a
    pair counts when its modulus lies within ``band_delta`` of 1 and its
    imaginary part is nonzero.  The count is per conjugate pair (upper-half
    representatives), so it is invariant to eigenvalue ordering.
    """
    z_states = np.atleast_2d(np.asarray(z_states, dtype=np.float64))
    h = params.hidden_size
    scale = np.ones(h)
    if target is not None and mode == "activity":
        scale[np.asarray(target, dtype=np.int64)] = mu
    counts = []
    for z in z_states:
        jac = jacobian_at(params, z) * scale[None, :]
        lam = eig(jac)
        mod = np.abs(lam)
        mask = (lam.imag > imag_tol) & (np.abs(mod - 1.0) <= band_delta)
        counts.append(int(mask.sum()))
    counts = np.array(counts, dtype=np.float64)
    return float(counts.mean()), float(counts.std())


@dataclass
class OscillationTraces:
    """Per-group mean-activity series with cluster occupancy annotation."""

    times: np.ndarray
    kick_series: list  # (T,) mean activity per kick group
    population_series: list
    dominant: np.ndarray
    bands: list  # (start, end, logit) run segments of the dominant series
    population_correlation: Optional[float]


def oscillation_traces(params, t_len, groups, stream, sigma=1.0, burn_in=200, tau=1.0):
    """Noisy rollout summarized as group-mean activity time series.

    Reports the lag-0 Pearson correlation between the two populations' mean
    activities when both are nonempty.
    """
    if not groups.kick_groups and not groups.populations:
        raise DataError("oscillation traces need at least one group")
    x = stream.gaussian((1, burn_in + t_len, params.input_size), sigma=sigma)
    _, h, y, _ = rollout_many(params, x, tau=tau)
    h = h[0, burn_in:, :]
    y = y[0, burn_in:, :]
    dominant = np.argmax(y, axis=1)
    kick_series = [h[:, g].mean(axis=1) if g.size else np.zeros(t_len) for g in groups.kick_groups]
    pop_series = [h[:, p].mean(axis=1) if p.size else np.zeros(t_len) for p in groups.populations]
    bands = []
    start = 0
    for t in range(1, t_len + 1):
        if t == t_len or dominant[t] != dominant[start]:
            bands.append((start, t, int(dominant[start])))
            start = t
    corr = None
    if len(pop_series) >= 2:
        s0, s1 = pop_series[0], pop_series[1]
        if s0.std() > 0 and s1.std() > 0:
            corr = float(np.corrcoef(s0, s1)[0, 1])
    return OscillationTraces(
        times=np.arange(t_len),
        kick_series=kick_series,
        population_series=pop_series,
        dominant=dominant,
        bands=bands,
        population_correlation=corr,
    )


def readout_alignment(params, basis):
    """Fraction of each readout row lying inside the given 2-D PCA plane.

    Returns ``(alignments, flags)``: per-row ||projection|| / ||row|| in
    [0, 1], with zero rows flagged undefined (NaN).
    """
    if basis.k != 2:
        raise ParameterError("readout alignment requires a 2-component basis")
    if basis.width != params.hidden_size:
        raise DimensionError("basis width does not match the hidden size")
    alignments = np.empty(3)
    flags = []
    for i in range(3):
        row = params.a[i]
        norm = np.linalg.norm(row)
        if norm == 0.0:
            alignments[i] = np.nan
            flags.append(i)
            continue
        coeff = basis.components @ row
        alignments[i] = float(np.linalg.norm(coeff) / norm)
    return alignments, flags


def control_set(h, groups, size, stream):
    """Random equal-sized target outside kick groups and populations."""
    excluded = set(int(i) for i in groups.all_kick()) | set(
        int(i) for i in groups.all_populations()
    )
    available = np.array([i for i in range(h) if i not in excluded], dtype=np.int64)
    if available.size < size:
        raise DataError(
            f"control set of size {size} impossible: only {available.size} free units"
        )
    order = np.argsort(stream.uniform(available.size), kind="stable")
    return available[order[:size]]
