"""Analysis orchestration shared by the CLI and the acceptance suite.

Each workflow derives all randomness from an explicit seed, so a given
(checkpoint, seed) pair always yields the same report.
"""

import numpy as np

from . import circuit as circuit_mod
from . import dynamics as dyn
from .errors import DataError
from .numerics import RngStream, linear_fit
from .rnn import rollout_many

__all__ = [
    "zones_workflow",
    "fixed_point_workflow",
    "perturbation_scan",
    "detect_groups_workflow",
    "cluster_states",
    "intervention_battery",
    "intervention_rows_csv",
]


def zones_workflow(params, seed, rollout_len=10_000, n_samples=2000,
                   rollouts_per_state=32, cap=50, sigma=1.0):
    """Residency map sampled from a long noisy rollout, classified."""
    zm = dyn.residency_map(
        params,
        rollout_len=rollout_len,
        n_samples=n_samples,
        rollouts_per_state=rollouts_per_state,
        cap=cap,
        sigma=sigma,
        stream=RngStream(seed, 101),
    )
    return dyn.classify_zones(zm)


def fixed_point_workflow(params, seed, n_inits=100, max_steps=10_000, tol=1e-9):
    return dyn.find_fixed_points(
        params, n_inits=n_inits, max_steps=max_steps, tol=tol,
        stream=RngStream(seed, 102),
    )


def perturbation_scan(params, ref_point, seed, sigma2_grid=(0.1, 1.0, 2.0, 3.0, 4.0),
                      horizon=10, n_traj=100):
    """Norm of the second-order perturbation vector across input variances,
    with the least-squares line against variance."""
    norms = []
    for i, s2 in enumerate(sigma2_grid):
        pv = dyn.second_order_perturbation(
            params, s2, ref_point, horizon=horizon, n_traj=n_traj,
            stream=RngStream(seed, 103).child(i),
        )
        norms.append(pv.norm)
    slope, intercept, r2 = linear_fit(np.array(sigma2_grid), np.array(norms))
    return {
        "sigma2": list(sigma2_grid),
        "norm": norms,
        "slope": slope,
        "intercept": intercept,
        "r_squared": r2,
    }


def detect_groups_workflow(params, zm, seed, sigma2=1.0, horizon=10, n_traj=100,
                           top_q=0.10, theta_gap=None):
    """Fixed point -> perturbation vector -> kick groups -> populations."""
    fp = fixed_point_workflow(params, seed)
    point = fp.dominant_point()
    if point is None:
        raise DataError("no converged fixed point: cannot anchor kick detection")
    pv = dyn.second_order_perturbation(
        params, sigma2, point, horizon=horizon, n_traj=n_traj,
        stream=RngStream(seed, 104),
    )
    groups = circuit_mod.detect_kick_neurons(params, zm, pv, top_q=top_q, theta_gap=theta_gap)
    if len(groups.kick_groups) >= 2:
        groups = circuit_mod.detect_populations(params, groups)
    return groups, fp, pv


def cluster_states(zm):
    """Representative state per cluster (largest residency), keyed by the
    cluster's dominant logit."""
    if zm.labels is None:
        raise DataError("zone map must be classified")
    labels = np.asarray(zm.labels)
    reps = {}
    for logit in np.unique(zm.dominant):
        sel = (labels == dyn.ZONE_CLUSTER) & (zm.dominant == logit)
        if not sel.any():
            continue
        idx = np.nonzero(sel)[0]
        best = idx[np.argmax(zm.residency[idx])]
        reps[int(logit)] = zm.states[best]
    return reps


def _count_for(params, neurons, mode, mu, ic, horizon, sigma, seed, band_delta=0.05):
    spec = circuit_mod.InterventionSpec(
        neurons=neurons, mode=mode, mu=mu, horizon=horizon, h0=ic, sigma=sigma
    )
    res = circuit_mod.intervene(params, spec, RngStream(seed, 105))
    target = neurons if mode == "activity" else None
    cp_mean, cp_sd = circuit_mod.critical_pairs(
        params, res.z, mu=mu, target=target, mode=mode, band_delta=band_delta
    )
    return res, cp_mean, cp_sd


def intervention_battery(params, groups, ic, seed, mus=(0.0, 0.5, 1.0, 1.5, 2.0),
                         horizon=4000, sigma=1.0, band_delta=0.05):
    """Transition counts and critical-pair statistics across interventions.

    Targets: each kick group (activity mode), each population (noise-drive
    mode), and an equal-sized random control set outside the circuit, all
    from the same initial condition with identical noise draws.
    """
    h = params.hidden_size
    targets = []
    for gi, g in enumerate(groups.kick_groups):
        targets.append((f"kick{gi}", g, "activity"))
    for pi, p in enumerate(groups.populations):
        if p.size:
            targets.append((f"pop{pi}", p, "noise_drive"))
    if groups.kick_groups:
        size = max(g.size for g in groups.kick_groups)
        ctrl = circuit_mod.control_set(h, groups, size, RngStream(seed, 106))
        targets.append(("control_activity", ctrl, "activity"))
        targets.append(("control_noise", ctrl, "noise_drive"))
    rows = []
    for name, neurons, mode in targets:
        for mu in mus:
            res, cp_mean, cp_sd = _count_for(
                params, neurons, mode, mu, ic, horizon, sigma, seed, band_delta
            )
            rows.append(
                {
                    "mu": mu,
                    "target": name,
                    "mode": mode,
                    "transition_count": res.transition_count,
                    "critical_pairs_mean": cp_mean,
                    "critical_pairs_sd": cp_sd,
                }
            )
    return rows


def intervention_rows_csv(rows):
    header = "mu,target,mode,transition_count,critical_pairs_mean,critical_pairs_sd"
    lines = [header]
    for r in rows:
        lines.append(
            f"{r['mu']!r},{r['target']},{r['mode']},{r['transition_count']},"
            f"{r['critical_pairs_mean']!r},{r['critical_pairs_sd']!r}"
        )
    return "\n".join(lines) + "\n"
