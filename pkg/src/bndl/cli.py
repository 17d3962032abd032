"""Command-line interface.

Every run embeds its resolved configuration, seed and tool version in
the emitted artifacts; failures exit nonzero with a single JSON line on
stderr.
"""

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import __version__, backend
from ._threads import resolve_threads
from .dataio import (
    emit_csv,
    emit_jsonl,
    load_dataset,
    load_dataset_csv,
    run_meta,
    write_dataset_csv,
    write_features,
    write_labels,
)
from .errors import BndlError, ConfigError
from .metrics import accuracy, sweep_alpha
from .model import init_model
from .synthlab import (
    BlobsSpec,
    bndl_identifiability_run,
    fit_exact_nmf,
    gen_blobs,
    gen_prop1_instance,
    identifiability_config,
    recovery_score,
)
from .training import (
    Checkpoint,
    TrainConfig,
    draw_noise,
    grad_check,
    load_checkpoint,
    one_hot,
    save_checkpoint,
    train_soft,
)
from .uncertainty import evaluate_uncertainty, uncertainty_bins

GRADCHECK_TOLERANCE = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(json.dumps({"error": "UsageError", "message": message}),
              file=sys.stderr)
        raise SystemExit(2)


def _load(args):
    if args.format == "csv":
        return load_dataset_csv(args.features, getattr(args, "classes", None))
    ds = load_dataset(args.features, args.labels)
    classes = getattr(args, "classes", None)
    if classes is not None and classes != ds.n_classes:
        raise ConfigError(
            f"--classes {classes} disagrees with label file ({ds.n_classes})"
        )
    return ds


def _add_dataset_args(p, with_classes=True):
    p.add_argument("--features", required=True)
    p.add_argument("--labels", help="label file (unused with --format csv)")
    p.add_argument("--format", choices=["bin", "csv"], default="bin")
    if with_classes:
        p.add_argument("--classes", type=int)


def _train_config(args, latent_dim):
    return TrainConfig(
        latent_dim=latent_dim,
        epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
        alpha_sparsity=args.alpha,
        mc_samples_per_step=args.mc_samples,
        kl_scale_local=args.kl_scale,
        optimizer=args.optimizer,
        weight_decay=args.weight_decay,
    )


def _add_train_args(p):
    p.add_argument("--latent-dim", type=int, required=True)
    p.add_argument("--alpha", type=float, default=0.0,
                   help="sparsity threshold of the loading activation")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mc-samples", type=int, default=1)
    p.add_argument("--kl-scale", type=float, default=1.0)
    p.add_argument("--optimizer", choices=["adam", "sgd_momentum"],
                   default="adam")
    p.add_argument("--weight-decay", type=float, default=0.0)


def _cmd_train(args):
    ds = _load(args)
    cfg = _train_config(args, args.latent_dim)
    if cfg.batch_size > ds.n:
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds dataset size {ds.n}")
    targets = one_hot(ds.labels, ds.n_classes)
    params, history, state = train_soft(ds.features, targets, cfg)
    save_checkpoint(args.out, Checkpoint(params=params, config=cfg, opt_state=state))
    meta = run_meta(config=asdict(cfg), seed=cfg.seed,
                    deterministic=True, backend=backend.BACKEND)
    emit_jsonl(args.out + ".history.jsonl",
               [r.to_dict() for r in history], meta)
    print(json.dumps({
        "checkpoint": args.out,
        "final_accuracy": history[-1].accuracy,
        "final_objective": history[-1].objective,
    }))
    return 0


def _cmd_eval(args):
    ckpt = load_checkpoint(args.ckpt)
    ds = _load(args)
    acc = accuracy(ckpt.params, ds, mode=args.mode,
                   mc_samples=args.samples, seed=args.seed)
    report = {
        "accuracy": acc,
        "mode": args.mode,
        "samples": args.samples if args.mode == "mc" else None,
        "n": ds.n,
    }
    print(json.dumps(report))
    if args.out:
        resolved = {"ckpt": args.ckpt, "mode": args.mode,
                    "samples": args.samples}
        emit_jsonl(args.out, [report],
                   run_meta(config=resolved, seed=args.seed))
    return 0


def _cmd_uncertainty(args):
    if args.samples < 2:
        raise ConfigError("--samples must be >= 2 (the t-test needs variance)")
    ckpt = load_checkpoint(args.ckpt)
    ds = _load(args)
    threads = resolve_threads(None, args.deterministic)
    records, report = evaluate_uncertainty(
        ckpt.params, ds, n_samples=args.samples,
        threshold=args.pvalue, seed=args.seed, threads=threads,
    )
    curve = uncertainty_bins(records, n_bins=args.bins)
    resolved = {
        "samples": args.samples, "pvalue": args.pvalue,
        "bins": args.bins, "threads": threads,
        "deterministic": bool(args.deterministic or threads == 1),
    }
    meta = run_meta(config=resolved, seed=args.seed, backend=backend.BACKEND)
    prefix = args.out_prefix
    emit_jsonl(prefix + ".records.jsonl",
               [r.to_dict() for r in records], meta)
    emit_jsonl(prefix + ".report.json", [report.to_dict()], meta)
    emit_csv(
        prefix + ".bins.csv",
        ["bin", "mean_p", "accuracy", "count"],
        [(i, float(curve.mean_p[i]), float(curve.accuracy[i]), int(curve.count[i]))
         for i in range(len(curve.count))],
        meta,
    )
    print(json.dumps(report.to_dict()))
    return 0


def _cmd_sweep(args):
    ds = _load(args)
    alphas = [float(a) for a in args.alphas.split(",") if a != ""]
    if not alphas:
        raise ConfigError("--alphas must list at least one value")
    cfg = _train_config(args, args.latent_dim)
    threads = resolve_threads(None, args.deterministic)
    points = sweep_alpha(ds, cfg, alphas,
                         pavpu_samples=args.pavpu_samples, threads=threads)
    meta = run_meta(config=asdict(cfg) | {"alphas": alphas, "threads": threads},
                    seed=cfg.seed, backend=backend.BACKEND)
    emit_csv(
        args.out,
        ["alpha", "nnz", "accuracy", "pavpu", "status"],
        [(p.alpha, p.nnz, p.accuracy, p.pavpu, p.status) for p in points],
        meta,
        float_fmt="%.9g",
    )
    print(json.dumps([p.to_dict() for p in points]))
    return 0


def _cmd_identifiability(args):
    reports = []
    for s in range(args.seeds):
        inst = gen_prop1_instance(args.m, args.n, args.r, args.windows, seed=s)
        if args.engine == "nmf":
            fit = fit_exact_nmf(inst.y, args.r, restarts=args.restarts,
                                iters=args.iters, seed=s)
            rep = recovery_score(inst, fit.theta)
            extra = {"residual": fit.residual}
        else:
            cfg = identifiability_config(inst, seed=s, alpha_sparsity=args.alpha)
            rep = bndl_identifiability_run(inst, cfg)
            extra = {}
        reports.append(rep.to_dict() | {"seed": s, "engine": args.engine} | extra)
    passed = sum(r["passed"] for r in reports)
    resolved = {k: getattr(args, k) for k in
                ("m", "n", "r", "windows", "seeds", "engine", "alpha")}
    if args.out:
        emit_jsonl(args.out, reports, run_meta(config=resolved, seed=0))
    print(json.dumps({"passed": passed, "total": args.seeds,
                      "engine": args.engine}))
    return 0


def _cmd_gradcheck(args):
    worst_all = 0.0
    results = []
    for trial in range(args.trials):
        rng = np.random.default_rng(args.seed + trial)
        params = init_model(8, 6, 3, alpha_sparsity=0.3 * (trial % 2),
                            seed=args.seed + trial)
        h = rng.normal(size=(16, 8))
        labels = rng.integers(0, 3, size=16)
        targets = one_hot(labels, 3)
        noise = draw_noise(rng, 1, 16, 6, 3)
        err = grad_check(params, h, targets, noise,
                         fd_step=args.fd_step, n_total=160)
        results.append(err)
        worst_all = max(worst_all, err)
        print(json.dumps({"trial": trial, "max_rel_error": err}))
    ok = worst_all < GRADCHECK_TOLERANCE
    print(json.dumps({"worst": worst_all, "tolerance": GRADCHECK_TOLERANCE,
                      "passed": ok}))
    return 0 if ok else 1


def _cmd_gen_blobs(args):
    spec = BlobsSpec(n=args.n, dim=args.dim, classes=args.classes,
                     spread=args.spread, overlap=args.overlap, seed=args.seed)
    ds = gen_blobs(spec)
    if args.format == "csv":
        write_dataset_csv(args.features_out, ds)
    else:
        if not args.labels_out:
            raise ConfigError("--labels-out is required with binary output")
        write_features(args.features_out, ds.features)
        write_labels(args.labels_out, ds.labels, ds.n_classes)
    print(json.dumps({"n": ds.n, "dim": ds.dim, "classes": ds.n_classes}))
    return 0


def _cmd_gen_features(args):
    inst = gen_prop1_instance(args.m, args.n, args.r, args.windows,
                              seed=args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    write_features(os.path.join(args.out_dir, "theta_star.feat"), inst.theta_star)
    write_features(os.path.join(args.out_dir, "phi_star.feat"), inst.phi_star)
    write_features(os.path.join(args.out_dir, "y.feat"), inst.y)
    meta = run_meta(config={"m": args.m, "n": args.n, "r": args.r,
                            "windows": args.windows}, seed=args.seed)
    emit_jsonl(os.path.join(args.out_dir, "instance.jsonl"),
               [{"window_cols": list(inst.window_cols), "rank": inst.rank}],
               meta)
    print(json.dumps({"out_dir": args.out_dir,
                      "window_cols": list(inst.window_cols)}))
    return 0


def build_parser():
    parser = _Parser(prog="bndl", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--deterministic", action="store_true",
                        help="force single-threaded ordered execution")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the decision layer")
    _add_dataset_args(p)
    _add_train_args(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint")
    p.add_argument("--ckpt", required=True)
    _add_dataset_args(p)
    p.add_argument("--mode", choices=["expected", "mc"], default="expected")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("uncertainty", help="MC t-test records, PAvPU, bins")
    p.add_argument("--ckpt", required=True)
    _add_dataset_args(p)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--pvalue", type=float, default=0.05)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=_cmd_uncertainty)

    p = sub.add_parser("sweep", help="sparsity-accuracy sweep over alphas")
    _add_dataset_args(p)
    _add_train_args(p)
    p.add_argument("--alphas", required=True,
                   help="comma-separated sparsity thresholds")
    p.add_argument("--pavpu-samples", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("identifiability",
                       help="factor recovery on generated instances")
    p.add_argument("--m", type=int, default=50)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--r", type=int, default=5)
    p.add_argument("--windows", type=int, default=2)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--engine", choices=["nmf", "bndl"], default="nmf")
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_identifiability)

    p = sub.add_parser("gradcheck",
                       help="analytic gradients vs central differences")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fd-step", type=float, default=1e-5)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("gen-blobs", help="synthetic labeled clusters")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--overlap", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--features-out", required=True)
    p.add_argument("--labels-out")
    p.add_argument("--format", choices=["bin", "csv"], default="bin")
    p.set_defaults(func=_cmd_gen_blobs)

    p = sub.add_parser("gen-features",
                       help="export a factorization instance's matrices")
    p.add_argument("--m", type=int, default=50)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--r", type=int, default=5)
    p.add_argument("--windows", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_gen_features)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.deterministic:
        os.environ["BNDL_THREADS"] = "1"
    try:
        return args.func(args)
    except BndlError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    except OSError as exc:
        print(json.dumps({"error": "IOError", "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
