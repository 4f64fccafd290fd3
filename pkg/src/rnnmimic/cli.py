"""Command-line front end.

Commands: ``hmm sample``, ``train``, ``evaluate``, ``analyze <pass>``,
``circuit <pass>``, ``report bundle``.  Every run writes under
``<out>/runs/<digest>/`` and every output embeds the config digest and seed;
rerunning a command with equal seeds reproduces the data outputs byte for
byte (the loss log's wall-time column is the one exception).

Exit codes: 2 missing file, 3 config validation, 4 numeric failure.
"""

import argparse
import glob
import json
import os
import sys

import numpy as np

from . import circuit as circuit_mod
from . import dynamics as dyn
from . import hmm as hmm_mod
from . import metrics as metrics_mod
from . import workflows as wf
from .errors import (
    ConfigDriftError,
    ConfigError,
    FormatError,
    NumericError,
    ParameterError,
    RnnMimicError,
    ValidationError,
)
from .numerics import RngStream, pca_fit, pca_project
from .report import jsonable, report_doc, run_dir, write_json, write_text
from .rnn import rollout_many
from .train import (
    TrainConfig,
    config_digest,
    load_checkpoint,
    save_checkpoint,
    train,
)

__all__ = ["main"]


def _load_json(path):
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from exc


def _hmm_from_args(args):
    if getattr(args, "hmm", None):
        doc = _load_json(args.hmm)
        return hmm_mod.HmmSpec.from_json(json.dumps(doc))
    kind = getattr(args, "kind", "linear_chain")
    if kind == "linear_chain":
        if args.M is None:
            raise ConfigError("--M is required for linear-chain models")
        return hmm_mod.build_linear_chain(args.M, rho=args.rho, eps=args.eps)
    return hmm_mod.build_preset(kind)


def _checkpoint_from_args(args):
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required for this command")
    if not os.path.exists(args.checkpoint):
        raise FileNotFoundError(args.checkpoint)
    return load_checkpoint(args.checkpoint)


def _report_dir(args, digest):
    return run_dir(args.out, digest)


def cmd_hmm_sample(args):
    spec = _hmm_from_args(args)
    doc = json.loads(spec.to_json())
    digest = config_digest({"hmm": doc, "len": args.len, "n": args.n, "seed": args.seed})
    out = _report_dir(args, digest)
    stream = RngStream(args.seed, 1)
    sequences = []
    states = []
    for child in stream.split(args.n):
        st, seq = hmm_mod.sample(spec, args.len, child)
        sequences.append(seq.observations.tolist())
        states.append(st.tolist())
    write_text(os.path.join(out, "reports", "hmm_spec.json"), spec.to_json() + "\n")
    write_json(
        os.path.join(out, "reports", "hmm_samples.json"),
        report_doc(
            "hmm_samples",
            digest,
            args.seed,
            {"len": args.len, "n": args.n},
            {"observations": sequences, "states": states if args.states else None},
        ),
    )
    print(out)
    return 0


def cmd_train(args):
    doc = _load_json(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.epochs is not None:
        doc["epochs"] = args.epochs
    for assignment in args.set or []:
        key, _, value = assignment.partition("=")
        if not _:
            raise ConfigError(f"--set expects key=value, got {assignment!r}")
        doc[key] = json.loads(value)
    cfg = TrainConfig.from_dict(doc)
    digest = cfg.digest()
    out = _report_dir(args, digest)
    write_json(os.path.join(out, "config.json"), cfg.to_dict())
    try:
        checkpoints, log = train(cfg)
    except NumericError as exc:
        if hasattr(exc, "checkpoint"):
            save_checkpoint(os.path.join(out, "checkpoints", "diagnostic.txt"), exc.checkpoint)
        raise
    for ckpt in checkpoints:
        save_checkpoint(
            os.path.join(out, "checkpoints", f"ckpt_{ckpt.epoch:05d}.txt"), ckpt
        )
    write_text(os.path.join(out, "logs", "losslog.csv"), log.to_csv())
    print(out)
    return 0


def cmd_evaluate(args):
    stream = RngStream(args.seed, 2)
    if args.checkpoint:
        ckpt = _checkpoint_from_args(args)
        spec = hmm_mod.HmmSpec.from_json(json.dumps(ckpt.config["hmm"]))
        seq_len = args.seq_len or ckpt.config["seq_len"]
        report = metrics_mod.evaluate_model(
            ckpt.params, spec, n_sequences=args.n, seq_len=seq_len,
            stream=stream, eps=args.eps_align,
        )
        digest = ckpt.digest
        report.meta = {"digest": digest, "seed": args.seed, "epoch": ckpt.epoch}
    else:
        spec = _hmm_from_args(args)
        seq_len = args.seq_len or 100
        a = hmm_mod.sample_many(spec, seq_len, args.n, stream.child(0))
        b = hmm_mod.sample_many(spec, seq_len, args.n, stream.child(1))
        (al_mean, al_sd), (b_mean, b_sd) = metrics_mod.aligned_euclidean(
            a, b, args.eps_align
        )
        t_emp, defined = metrics_mod.empirical_transition(a)
        report = metrics_mod.MetricReport(
            aligned_mean=al_mean,
            aligned_sd=al_sd,
            baseline_mean=b_mean,
            baseline_sd=b_sd,
            transition_rnn=t_emp,
            transition_hmm=hmm_mod.obs_pair_matrix(spec),
            transition_sq_diff=metrics_mod.transition_sq_diff(
                t_emp, hmm_mod.obs_pair_matrix(spec)
            ),
            transition_defined=defined,
            freq_rnn=metrics_mod.observation_frequencies(a),
            freq_hmm=hmm_mod.obs_frequencies(spec),
            volatility_rnn=metrics_mod.volatility(a),
            volatility_hmm=hmm_mod.obs_volatility(spec),
            n_sequences=args.n,
            seq_len=seq_len,
            eps=args.eps_align,
        )
        digest = config_digest({"hmm": json.loads(spec.to_json()), "eval": "self"})
        report.meta = {"digest": digest, "seed": args.seed, "mode": "hmm-self"}
    out = _report_dir(args, digest)
    path = os.path.join(out, "reports", "metrics.json")
    write_text(path, report.to_json() + "\n")
    print(path)
    return 0


def _zones(args, ckpt):
    return wf.zones_workflow(
        ckpt.params, args.seed, rollout_len=args.rollout_len,
        n_samples=args.samples, rollouts_per_state=args.rollouts, cap=args.cap,
    )


def _zone_doc(zm):
    return {
        "residency": zm.residency,
        "sign_changes": zm.sign_changes,
        "unstable": zm.unstable,
        "dominant": zm.dominant,
        "labels": zm.labels,
        "time_index": zm.time_index,
        "cap": zm.cap,
        "rollouts_per_state": zm.rollouts_per_state,
        "thresholds": zm.thresholds,
    }


def cmd_analyze(args):
    ckpt = None
    if args.pass_name != "epochs":
        ckpt = _checkpoint_from_args(args)
        out = _report_dir(args, ckpt.digest)
    if args.pass_name == "fixed-points":
        fp = wf.fixed_point_workflow(
            ckpt.params, args.seed, n_inits=args.inits, max_steps=args.max_steps,
            tol=args.tol,
        )
        doc = report_doc(
            "fixed_points", ckpt.digest, args.seed,
            {"n_inits": fp.n_inits, "tol": fp.tol, "max_steps": fp.max_steps,
             "merge_radius": fp.merge_radius},
            {"count": fp.count, "points": fp.points, "residuals": fp.residuals,
             "member_counts": fp.member_counts, "converged": fp.converged,
             "spectra": [s for s in fp.spectra]},
        )
        path = os.path.join(out, "reports", "fixed_points.json")
    elif args.pass_name == "orbits":
        scan = dyn.orbit_radius_scan(
            ckpt.params, args.sigma2, t_len=args.t_len,
            stream=RngStream(args.seed, 107),
        )
        doc = report_doc(
            "orbit_radius", ckpt.digest, args.seed,
            {"sigma2": scan.sigma2, "t_len": args.t_len},
            {"radius": scan.radius, "slope": scan.slope,
             "intercept": scan.intercept, "r_squared": scan.r_squared},
        )
        path = os.path.join(out, "reports", "orbit_radius.json")
    elif args.pass_name == "zones":
        zm = _zones(args, ckpt)
        doc = report_doc("zones", ckpt.digest, args.seed,
                         {"samples": args.samples, "rollouts": args.rollouts},
                         _zone_doc(zm))
        path = os.path.join(out, "reports", "zones.json")
    elif args.pass_name == "noise":
        zm = _zones(args, ckpt)
        labels = np.asarray(zm.labels)
        reps = wf.cluster_states(zm)
        ics = {f"cluster{k}": v for k, v in reps.items()}
        if (labels == dyn.ZONE_TRANSITION).any():
            idx = np.nonzero(labels == dyn.ZONE_TRANSITION)[0][0]
            ics["transition"] = zm.states[idx]
        data = {}
        for name, ic in ics.items():
            per_gamma = {}
            for gamma in (0.0, 0.5, 1.0):
                probe = dyn.noise_sensitivity(
                    ckpt.params, ic, gamma, n_traj=args.n_traj, t_len=args.t_len_noise,
                    stream=RngStream(args.seed, 108),
                )
                per_gamma[str(gamma)] = {
                    "cov_trace": probe.cov_trace,
                    "mean_distance": probe.mean_distance,
                }
            data[name] = per_gamma
        doc = report_doc("noise_sensitivity", ckpt.digest, args.seed,
                         {"n_traj": args.n_traj, "t_len": args.t_len_noise}, data)
        path = os.path.join(out, "reports", "noise_sensitivity.json")
    elif args.pass_name == "perturbation":
        fp = wf.fixed_point_workflow(ckpt.params, args.seed)
        point = fp.dominant_point()
        if point is None:
            raise NumericError("no converged fixed point for the perturbation scan")
        scan = wf.perturbation_scan(ckpt.params, point, args.seed, tuple(args.sigma2))
        doc = report_doc("perturbation", ckpt.digest, args.seed,
                         {"sigma2": args.sigma2}, scan)
        path = os.path.join(out, "reports", "perturbation.json")
    elif args.pass_name == "epochs":
        if not args.run:
            raise ConfigError("--run is required for the epochs pass")
        files = sorted(glob.glob(os.path.join(args.run, "checkpoints", "ckpt_*.txt")))
        if not files:
            raise FileNotFoundError(os.path.join(args.run, "checkpoints"))
        ckpts = [load_checkpoint(f) for f in files]
        rows = dyn.epoch_sweep(ckpts, stream=RngStream(args.seed, 109))
        out = run_dir(args.out, ckpts[0].digest)
        write_text(os.path.join(out, "reports", "epoch_sweep.csv"),
                   dyn.epoch_sweep_csv(rows))
        doc = report_doc("epoch_sweep", ckpts[0].digest, args.seed,
                         {"checkpoints": len(ckpts)}, {"rows": rows})
        path = os.path.join(out, "reports", "epoch_sweep.json")
    elif args.pass_name == "subspaces":
        x = RngStream(args.seed, 110).gaussian(
            (1, args.rollout_len + 200, ckpt.params.input_size)
        )
        _, h, y, _ = rollout_many(ckpt.params, x)
        h, y = h[0, 200:], y[0, 200:]
        dominant = np.argmax(y, axis=1)
        labels = np.full(dominant.size, -1, dtype=np.int64)
        segs = circuit_mod._residence_segments(dominant, 8)
        for start, end, logit in segs:
            labels[start:end] = logit
        present = sorted(set(labels[labels >= 0].tolist()))
        pairs = [(a, b) for i, a in enumerate(present) for b in present[i + 1 :]]
        data = {"clusters": present, "pairs": []}
        for pair in pairs:
            basis, coords, sel = dyn.pair_subspace_pca(h, labels, pair)
            data["pairs"].append({
                "pair": list(pair),
                "explained": basis.explained,
                "n_points": int(sel.size),
                "coords_head": coords[:2000],
            })
        doc = report_doc("subspaces", ckpt.digest, args.seed,
                         {"rollout_len": args.rollout_len}, data)
        path = os.path.join(out, "reports", "subspaces.json")
    else:
        raise ConfigError(f"unknown analyze pass {args.pass_name!r}")
    write_json(path, doc)
    print(path)
    return 0


def cmd_circuit(args):
    ckpt = _checkpoint_from_args(args)
    out = _report_dir(args, ckpt.digest)
    if args.pass_name == "alignment":
        x = RngStream(args.seed, 111).gaussian(
            (1, args.rollout_len + 200, ckpt.params.input_size)
        )
        _, h, _, _ = rollout_many(ckpt.params, x)
        basis = pca_fit(h[0, 200:], 2)
        alignments, flags = circuit_mod.readout_alignment(ckpt.params, basis)
        doc = report_doc("readout_alignment", ckpt.digest, args.seed,
                         {"rollout_len": args.rollout_len},
                         {"alignment": alignments, "undefined_rows": flags})
        path = os.path.join(out, "reports", "readout_alignment.json")
        write_json(path, doc)
        print(path)
        return 0
    zm = _zones(args, ckpt)
    groups, fp, pv = wf.detect_groups_workflow(ckpt.params, zm, args.seed)
    if args.pass_name == "detect":
        doc = report_doc(
            "neuron_groups", ckpt.digest, args.seed, groups.meta,
            {"kick_groups": [g for g in groups.kick_groups],
             "directions": [list(d) for d in groups.directions],
             "populations": [p for p in groups.populations],
             "residual_size": int(groups.residual.size),
             "dh2_norm": pv.norm},
        )
        path = os.path.join(out, "reports", "neuron_groups.json")
    elif args.pass_name == "report":
        doc = report_doc("connectivity", ckpt.digest, args.seed, groups.meta,
                         circuit_mod.connectivity_report(ckpt.params, groups))
        path = os.path.join(out, "reports", "connectivity.json")
    elif args.pass_name == "intervene":
        reps = wf.cluster_states(zm)
        if not reps:
            raise NumericError("no cluster states found for intervention ICs")
        ic = reps[sorted(reps)[0]]
        rows = wf.intervention_battery(
            ckpt.params, groups, ic, args.seed, mus=tuple(args.mu),
            horizon=args.horizon,
        )
        write_text(os.path.join(out, "reports", "interventions.csv"),
                   wf.intervention_rows_csv(rows))
        doc = report_doc("interventions", ckpt.digest, args.seed,
                         {"mus": args.mu, "horizon": args.horizon}, {"rows": rows})
        path = os.path.join(out, "reports", "interventions.json")
    elif args.pass_name == "oscillations":
        traces = circuit_mod.oscillation_traces(
            ckpt.params, args.t_len_osc, groups, RngStream(args.seed, 112)
        )
        doc = report_doc(
            "oscillations", ckpt.digest, args.seed, {"t_len": args.t_len_osc},
            {"kick_series": traces.kick_series,
             "population_series": traces.population_series,
             "bands": traces.bands,
             "population_correlation": traces.population_correlation},
        )
        path = os.path.join(out, "reports", "oscillations.json")
    else:
        raise ConfigError(f"unknown circuit pass {args.pass_name!r}")
    write_json(path, doc)
    print(path)
    return 0


def cmd_report_bundle(args):
    run = args.run
    if not os.path.isdir(run):
        raise FileNotFoundError(run)
    manifest = {"run": os.path.basename(run.rstrip("/")), "reports": {}, "logs": {}}
    cfg_path = os.path.join(run, "config.json")
    if os.path.exists(cfg_path):
        manifest["config"] = _load_json(cfg_path)
    for name in sorted(os.listdir(os.path.join(run, "reports"))):
        path = os.path.join(run, "reports", name)
        if name.endswith(".json"):
            manifest["reports"][name] = _load_json(path)
        else:
            with open(path) as fh:
                manifest["reports"][name] = fh.read()
    logs_dir = os.path.join(run, "logs")
    if os.path.isdir(logs_dir):
        for name in sorted(os.listdir(logs_dir)):
            with open(os.path.join(logs_dir, name)) as fh:
                manifest["logs"][name] = fh.read()
    path = os.path.join(run, "manifest.json")
    write_json(path, manifest)
    print(path)
    return 0


def _add_hmm_flags(p, with_kind=True):
    if with_kind:
        p.add_argument("--kind", default="linear_chain",
                       choices=["linear_chain", "fully_connected", "cyclic"])
    p.add_argument("--M", type=int, default=None, help="linear-chain state count")
    p.add_argument("--rho", type=float, default=0.05)
    p.add_argument("--eps", dest="eps", type=float, default=0.01)
    p.add_argument("--hmm", default=None, help="path to a full HMM JSON document")


def _add_zone_flags(p):
    p.add_argument("--rollout-len", type=int, default=10_000, dest="rollout_len")
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--rollouts", type=int, default=32)
    p.add_argument("--cap", type=int, default=50)


def build_parser():
    parser = argparse.ArgumentParser(prog="rnnmimic", description=__doc__)
    parser.add_argument("--out", default=".", help="base output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p_hmm = sub.add_parser("hmm", help="HMM utilities")
    hmm_sub = p_hmm.add_subparsers(dest="hmm_command", required=True)
    p_sample = hmm_sub.add_parser("sample", help="sample observation sequences")
    _add_hmm_flags(p_sample)
    p_sample.add_argument("--len", type=int, required=True)
    p_sample.add_argument("--n", type=int, required=True)
    p_sample.add_argument("--seed", type=int, default=0)
    p_sample.add_argument("--states", action="store_true", help="include hidden states")
    p_sample.set_defaults(func=cmd_hmm_sample)

    p_train = sub.add_parser("train", help="train a network on an HMM target")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--set", action="append", metavar="KEY=JSON",
                         help="override a config key")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="metric battery for a checkpoint "
                            "(or an HMM against itself)")
    p_eval.add_argument("--checkpoint", default=None)
    _add_hmm_flags(p_eval)
    p_eval.add_argument("--n", type=int, default=500)
    p_eval.add_argument("--seq-len", type=int, default=None, dest="seq_len")
    p_eval.add_argument("--eps-align", type=float, default=0.05, dest="eps_align")
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.set_defaults(func=cmd_evaluate)

    p_an = sub.add_parser("analyze", help="dynamics analyses")
    p_an.add_argument("pass_name", choices=[
        "fixed-points", "orbits", "zones", "noise", "perturbation", "epochs",
        "subspaces",
    ])
    p_an.add_argument("--checkpoint", default=None)
    p_an.add_argument("--run", default=None, help="run directory (epochs pass)")
    p_an.add_argument("--seed", type=int, default=0)
    p_an.add_argument("--inits", type=int, default=100)
    p_an.add_argument("--max-steps", type=int, default=10_000, dest="max_steps")
    p_an.add_argument("--tol", type=float, default=1e-9)
    p_an.add_argument("--sigma2", type=float, nargs="+",
                      default=[0.1, 1.0, 2.0, 3.0, 4.0])
    p_an.add_argument("--t-len", type=int, default=5000, dest="t_len")
    p_an.add_argument("--t-len-noise", type=int, default=60, dest="t_len_noise")
    p_an.add_argument("--n-traj", type=int, default=30, dest="n_traj")
    _add_zone_flags(p_an)
    p_an.set_defaults(func=cmd_analyze)

    p_ci = sub.add_parser("circuit", help="kick-circuit analyses")
    p_ci.add_argument("pass_name", choices=[
        "detect", "report", "intervene", "oscillations", "alignment",
    ])
    p_ci.add_argument("--checkpoint", required=True)
    p_ci.add_argument("--seed", type=int, default=0)
    p_ci.add_argument("--mu", type=float, nargs="+", default=[0.0, 0.5, 1.0, 1.5, 2.0])
    p_ci.add_argument("--horizon", type=int, default=4000)
    p_ci.add_argument("--t-len-osc", type=int, default=1000, dest="t_len_osc")
    _add_zone_flags(p_ci)
    p_ci.set_defaults(func=cmd_circuit)

    p_rb = sub.add_parser("report", help="reporting utilities")
    rb_sub = p_rb.add_subparsers(dest="report_command", required=True)
    p_bundle = rb_sub.add_parser("bundle", help="aggregate a run's reports")
    p_bundle.add_argument("--run", required=True)
    p_bundle.set_defaults(func=cmd_report_bundle)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ConfigDriftError, ValidationError, ParameterError,
            FormatError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return 4
    except RnnMimicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
