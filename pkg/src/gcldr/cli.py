"""Experiment runner CLI.

Subcommands: generate, train, evaluate, gradcheck, taylor, export.
Exit codes: 0 ok, 2 config error, 3 numeric divergence, 4 check failure.
Set GCLDR_LOG to control log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import data as data_mod
from . import meta as meta_mod
from . import trainer as trainer_mod
from .config import DEFAULT_CONFIG, ExperimentConfig, load_config, parse_config
from .exceptions import ConfigError, DivergenceError, GcldrError
from .gradcheck import check_loss_suite
from .ldd import compute_posteriors
from .metrics import metrics
from .model import load_checkpoint, save_checkpoint
from .tensor import Tensor

SCHEMA_VERSION = 1

log = logging.getLogger("gcldr")


def _setup_logging():
    level = os.environ.get("GCLDR_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


def _dataset_for_seed(cfg: ExperimentConfig, seed: int) -> data_mod.GcldrDataset:
    return data_mod.generate(
        cfg.dataset.split_spec(),
        cfg.dataset.nuisance_spec(),
        d=cfg.dataset.dim,
        per_combo=cfg.dataset.per_combo,
        seed=cfg.dataset.seed + seed,
        noise_sigma=cfg.dataset.noise_sigma,
    )


def run_seed(config_text: str, seed: int, out_dir: str | None = None) -> dict:
    """Train and evaluate one seed; returns metrics + per-epoch history."""
    cfg = parse_config(config_text)
    ds = _dataset_for_seed(cfg, seed)
    X_tr, y_tr = ds.rows("train")
    X_te, y_te = ds.rows("test")
    (val, test) = data_mod.split_validation(
        X_te, y_te, fraction=cfg.evaluation.val_fraction, seed=seed
    )
    c = cfg.dataset.split_spec().n_classes
    tau = cfg.evaluation.tau if cfg.evaluation.tau is not None else 1.0 / c
    tcfg = replace(cfg.training, seed=seed)
    bundle, history = trainer_mod.fit(X_tr, y_tr, tcfg, val=val, tau=tau)
    report = metrics(trainer_mod.predict(bundle, test[0]), test[1], tau)
    if out_dir is not None:
        save_checkpoint(bundle, os.path.join(out_dir, f"checkpoint_seed{seed}.npz"))
    return {"seed": seed, "metrics": report.to_json(), "history": history}


def run_experiment(cfg: ExperimentConfig, workers: int = 1, out_dir: str | None = None) -> dict:
    started = time.time()
    seeds = cfg.evaluation.seeds
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_seed, cfg.raw_text, s, out_dir) for s in seeds]
            results = [f.result() for f in futures]
    else:
        results = [run_seed(cfg.raw_text, s, out_dir) for s in seeds]
    results.sort(key=lambda r: r["seed"])

    agg = {}
    for key in ("aauc", "afar", "afrr", "abfr", "acc1"):
        values = [r["metrics"][key] for r in results]
        agg[key] = {"mean": float(np.mean(values)), "std": float(np.std(values))}
    return {
        "schema_version": SCHEMA_VERSION,
        "artifact_version": "0.1.0",
        "config_hash": cfg.config_hash(),
        "variant": cfg.training.variant,
        "seeds": list(seeds),
        "per_seed": results,
        "aggregate": agg,
        "wall_clock_sec": time.time() - started,
    }


# -- subcommands --------------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig, args) -> int:
    os.makedirs(args.out, exist_ok=True)
    ds = _dataset_for_seed(cfg, args.seed or 0)
    path = os.path.join(args.out, "dataset.csv")
    data_mod.save_csv(ds, path)
    print(f"wrote {path} ({ds.X.shape[0]} rows)")
    return 0


def cmd_train(cfg: ExperimentConfig, args) -> int:
    os.makedirs(args.out, exist_ok=True)
    report = run_experiment(cfg, workers=args.workers, out_dir=args.out)
    path = os.path.join(args.out, "report.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    print(f"wrote {path}")
    for key, stats in report["aggregate"].items():
        print(f"  {key}: {stats['mean']:.4f} +/- {stats['std']:.4f}")
    return 0


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    ds = data_mod.load_csv(args.data)
    X, y = ds.rows("test")
    tau = cfg.evaluation.tau if cfg.evaluation.tau is not None else 1.0 / bundle.c
    report = metrics(trainer_mod.predict(bundle, X), y, tau)
    print(json.dumps(report.to_json(), indent=2, sort_keys=True))
    return 0


def cmd_gradcheck(cfg: ExperimentConfig, args) -> int:
    threshold = 1e-4
    failed = False
    for seed in range(args.seeds):
        errors = check_loss_suite(seed=seed)
        for name, err in errors.items():
            ok = err <= threshold
            failed = failed or not ok
            print(f"seed {seed:2d}  {name:12s}  max_rel_err {err:.3e}  "
                  f"{'PASS' if ok else 'FAIL'}")
    return 4 if failed else 0


def cmd_taylor(cfg: ExperimentConfig, args) -> int:
    ds = _dataset_for_seed(cfg, args.seed or 0)
    X_tr, y_tr = ds.rows("train")
    rng = np.random.default_rng(args.seed or 0)
    idx = rng.permutation(X_tr.shape[0])[: min(64, X_tr.shape[0])]
    X_b, y_b = X_tr[idx], y_tr[idx]

    from .model import build_bundle

    bundle = build_bundle(
        d=X_b.shape[1], c=int(y_tr.max()) + 1, k=cfg.training.k,
        p_width=cfg.model["p_width"], g_width=cfg.model["g_width"],
        p_dropout=0.0, seed=args.seed or 0, variant="meta",
    )
    f_cd, f_ci = bundle.forward_features(Tensor(X_b), mode="train", dropout_off=True)
    rho_cd = compute_posteriors(bundle.r_l_cd, bundle.d_cd, f_cd, y_b, space="cd")
    rho_ci = compute_posteriors(bundle.r_l_ci, bundle.d_ci, f_ci, y_b, space="ci")
    split = meta_mod.split_domains(cfg.training.k, rng)
    rows = meta_mod.verify_taylor(
        bundle, X_b, y_b, rho_cd, rho_ci, split,
        gamma=cfg.training.gamma, alpha_list=[1e-1, 1e-2, 1e-3],
    )
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "taylor.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["alpha", "exact", "approx", "abs_error", "decay_ratio"]
        )
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print(f"alpha {row['alpha']:.0e}  abs_error {row['abs_error']:.3e}  "
              f"decay_ratio {row['decay_ratio']:.1f}")
    print(f"wrote {path}")
    return 0


def cmd_export(cfg, args) -> int:
    with open(args.report) as fh:
        report = json.load(fh)
    os.makedirs(args.out, exist_ok=True)
    if args.format == "json":
        path = os.path.join(args.out, "export.json")
        with open(path, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
    elif args.format == "csv":
        path = os.path.join(args.out, "history.csv")
        fields = ["seed"] + sorted(
            {k for r in report["per_seed"] for row in r["history"] for k in row}
        )
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for r in report["per_seed"]:
                for row in r["history"]:
                    writer.writerow({"seed": r["seed"], **row})
    elif args.format == "plotdata":
        path = os.path.join(args.out, "plotdata.csv")
        n_epochs = max(len(r["history"]) for r in report["per_seed"])
        keys = sorted(
            {k for r in report["per_seed"] for row in r["history"] for k in row if k != "epoch"}
        )
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch"] + keys)
            for e in range(n_epochs):
                row = [e]
                for key in keys:
                    vals = [
                        r["history"][e][key]
                        for r in report["per_seed"]
                        if e < len(r["history"])
                        and isinstance(r["history"][e].get(key), (int, float))
                    ]
                    row.append(float(np.mean(vals)) if vals else "")
                writer.writerow(row)
    else:
        raise ConfigError(f"unknown export format {args.format!r}")
    print(f"wrote {path}")
    return 0


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gcldr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="INI config path (default: built-in)")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--variant", default=None, help="training variant override")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", default="runs")

    for name in ("generate", "train", "gradcheck", "taylor"):
        common(sub.add_parser(name))
    p_eval = sub.add_parser("evaluate")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_exp = sub.add_parser("export")
    common(p_exp)
    p_exp.add_argument("--report", required=True)
    p_exp.add_argument("--format", choices=("csv", "json", "plotdata"), default="json")
    sub.choices["gradcheck"].add_argument(
        "--seeds", dest="seeds", type=int, default=20, help="number of gradcheck seeds"
    )
    return parser


def _load_cfg(args) -> ExperimentConfig:
    text = DEFAULT_CONFIG if args.config is None else open(args.config).read()
    cfg = parse_config(text)
    if args.variant is not None:
        cfg = replace(cfg, training=replace(cfg.training, variant=args.variant))
        # keep raw_text aligned so the config hash reflects the override
        cfg.raw_text += f"\n# variant-override = {args.variant}\n"
    if args.seed is not None:
        cfg = replace(cfg, evaluation=replace(cfg.evaluation, seeds=[args.seed]))
        cfg.raw_text += f"# seed-override = {args.seed}\n"
    return cfg


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    handlers = {
        "generate": cmd_generate,
        "train": cmd_train,
        "evaluate": cmd_evaluate,
        "gradcheck": cmd_gradcheck,
        "taylor": cmd_taylor,
        "export": cmd_export,
    }
    try:
        cfg = _load_cfg(args)
        return handlers[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return 3
    except GcldrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
