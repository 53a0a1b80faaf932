"""Command-line experiment runner: ``train``, ``eval``, ``diag``, ``feasibility``, ``sample``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import checkpoint as ckpt_io
from . import distributions as dist
from . import evaluation, kernel
from ._random import make_rng
from .config import ConfigError, ExperimentConfig, load_config, loads_config
from .experiment import build_experiment, down_from_descriptor
from .instances import RegistryError, check_feasibility, make_named
from .network import Preconditioner, SurfaceModel
from .trainer import TRACE_COLUMNS, TrainingAborted, train

log = logging.getLogger("probsurf")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_CHECKPOINT = 4


def fmt(value) -> str:
    """Locale-independent 17-significant-digit formatting."""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def write_trace_csv(path, trace, record_wall_time=False) -> None:
    wall = TRACE_COLUMNS.index("wall_time")
    with open(path, "w", newline="", encoding="ascii") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for row in trace.rows:
            vals = list(row)
            if not record_wall_time:
                vals[wall] = 0.0
            fh.write(",".join(fmt(v) for v in vals) + "\n")


def write_rows_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def _checkpoint_for(exp, theta, iteration) -> ckpt_io.Checkpoint:
    down = exp.down.describe()
    return ckpt_io.Checkpoint(
        iteration=iteration,
        config_hash=exp.config.hash(),
        spec=exp.spec,
        mean=exp.precond.mean,
        std=exp.precond.std,
        theta=theta,
        down=down,
        config_text=exp.config.canonical_text(),
        extra={"precondition": bool(exp.config["model.precondition"])},
    )


def _config_with_seed(cfg: ExperimentConfig, seed, out) -> ExperimentConfig:
    over = {}
    if seed is not None:
        over["train.seed"] = seed
    if out is not None:
        over["output.dir"] = out
    return cfg.with_overrides(**over) if over else cfg


def run_train(config_path, seed=None, out=None) -> int:
    try:
        cfg = _config_with_seed(load_config(config_path), seed, out)
        exp = build_experiment(cfg)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = cfg["output.dir"]
    os.makedirs(out_dir, exist_ok=True)
    ck_dir = os.path.join(out_dir, "checkpoints")
    save_ckpts = cfg["output.checkpoints"]
    if save_ckpts:
        os.makedirs(ck_dir, exist_ok=True)

    def on_checkpoint(t, theta, state):
        if not save_ckpts:
            return None
        path = os.path.join(ck_dir, f"ckpt_{t:09d}.bin")
        ckpt_io.save(path, _checkpoint_for(exp, theta, t))
        return path

    tcfg = exp.train_cfg
    test = exp.test_sets() if exp.up_dist is not None else None
    try:
        theta, trace = train(
            exp.spec, exp.precond, exp.instance, exp.data, exp.down, tcfg,
            test=test, on_checkpoint=on_checkpoint, zero_last_layer=cfg["model.zero_last_layer"],
        )
    except TrainingAborted as exc:
        print(f"numeric failure: {exc}; last checkpoint: {exc.last_checkpoint}", file=sys.stderr)
        return EXIT_NUMERIC
    write_trace_csv(os.path.join(out_dir, cfg["output.csv"]), trace, cfg["output.record_wall_time"])
    final_path = os.path.join(out_dir, "final.bin")
    ckpt_io.save(final_path, _checkpoint_for(exp, theta, tcfg.iterations))
    model = SurfaceModel(exp.spec, exp.precond, theta)
    summary = {"iterations": tcfg.iterations, "config_hash": cfg.hash(), "checkpoint": final_path}
    summary.update({k: v for k, v in trace.last.items() if k != "wall_time"})
    summary["total_integral"] = evaluation.total_integral(
        model, exp.down, cfg["eval.integral_samples"], make_rng(tcfg.seed, "integral")
    )
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return EXIT_OK


def _load_model(checkpoint_path):
    ck = ckpt_io.load(checkpoint_path)
    cfg = loads_config(ck.config_text)
    exp = build_experiment(cfg)
    if ck.down is not None and ck.down.get("kind") != "conditional":
        down = down_from_descriptor(ck.down)
    else:
        down = exp.down
    hb = down if ck.extra.get("precondition", True) else None
    precond = Preconditioner(ck.mean, ck.std, hb)
    exp.precond = precond
    exp.down = down
    return ck, exp, SurfaceModel(ck.spec, precond, ck.theta)


def run_eval(checkpoint_path, seed=None, out=None, overrides=None) -> int:
    try:
        ck, exp, model = _load_model(checkpoint_path)
        if overrides:
            exp.config = exp.config.with_overrides(**overrides)
    except ckpt_io.CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    s = exp.train_cfg.seed if seed is None else seed
    test = exp.test_sets(s)
    report = evaluation.EvalReport(
        psqr=evaluation.psqr(model, test.true_logpdf, test.up),
        lsqr=evaluation.lsqr(model, test.true_logpdf, test.up),
        is_err=evaluation.is_error(model, test.up, test.down, exp.down),
        total_integral=evaluation.total_integral(
            model, exp.down, exp.config["eval.integral_samples"], make_rng(s, "integral")
        ),
        n_test=test.up.shape[0],
    )
    text = json.dumps({"iteration": ck.iteration, "seed": s, **report.to_dict()}, indent=2, sort_keys=True)
    print(text)
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "eval.json"), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def _probes(exp, count, seed):
    """Half up-density draws, half down-density draws."""
    n_up = count - count // 2
    up = exp.up_dist.sample(make_rng(seed, "probe"), n_up) if exp.up_dist is not None else exp.data[:n_up]
    down = exp.down.sample(make_rng(seed, "test_down"), count // 2)
    return np.concatenate([up, down], axis=0)


def run_diag(checkpoint_path, mode, out, probes=100, kind="raw", deltas=(1e-3,), seed=None, batch=None) -> int:
    try:
        ck, exp, model = _load_model(checkpoint_path)
    except ckpt_io.CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    s = exp.train_cfg.seed if seed is None else seed
    os.makedirs(out, exist_ok=True)
    pts = _probes(exp, probes, s)
    if mode == "scan":
        scan = kernel.pair_scan(model, pts, kind)
        col = {"raw": "g", "relative": "r", "cosine": "cos"}[kind]
        write_rows_csv(os.path.join(out, f"scan_{kind}.csv"), ("d", col), zip(scan.distance, scan.similarity))
    elif mode == "gramian":
        G = kernel.gramian(model, pts)
        np.save(os.path.join(out, "gramian.npy"), G)
        np.save(os.path.join(out, "gramian_points.npy"), pts)
        unc = evaluation.uncertainty_metrics(G)
        c2 = unc.c2 if unc.c2 is not None else np.full(G.shape[0], np.nan)
        write_rows_csv(os.path.join(out, "uncertainty.csv"), ("index", "c1", "c2"), zip(range(G.shape[0]), unc.c1, c2))
    elif mode == "differential":
        nb = batch or exp.train_cfg.batch_up
        up = exp.data[make_rng(s, "up").integers(0, exp.data.shape[0], size=nb)]
        down = exp.down.sample(make_rng(s, "down"), exp.train_cfg.batch_down if batch is None else batch)
        recs = kernel.differential_check(model, exp.instance, up, down, pts, deltas, aux=exp.down)
        write_rows_csv(
            os.path.join(out, "differential.csv"),
            ("probe", "delta", "df_real", "df_approx", "ratio", "degenerate"),
            [(r.probe, r.delta, r.df_real, r.df_approx, r.ratio, int(r.degenerate)) for r in recs],
        )
    else:
        print(f"unknown diag mode {mode!r}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def run_feasibility(name, params=None, grid_size=None, out=None) -> int:
    try:
        inst = make_named(name, **(params or {}))
    except (RegistryError, ValueError) as exc:
        print(f"instance error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    grid = None
    if grid_size is not None:
        lo, hi = inst.interval
        lo = max(lo, -30.0) + 1e-9
        hi = min(hi, 30.0) - 1e-9
        grid = np.linspace(lo, hi, grid_size)
    report = check_feasibility(inst, s_grid=grid)
    text = json.dumps({"instance": inst.describe(), **report.to_dict()}, indent=2, sort_keys=True)
    print(text)
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "feasibility.json"), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def run_sample(distribution, dim, count, seed, out) -> int:
    if distribution == "columns":
        d = dist.columns(dim)
    elif distribution == "transformed_columns":
        d = dist.transformed_columns(dim)
    elif distribution == "matrix":
        os.makedirs(out, exist_ok=True)
        dist.export_matrix_csv(os.path.join(out, "matrix.csv"), dim)
        return EXIT_OK
    else:
        print(f"unknown distribution {distribution!r}", file=sys.stderr)
        return EXIT_CONFIG
    X = d.sample(make_rng(seed, "data"), count)
    os.makedirs(out, exist_ok=True)
    write_rows_csv(os.path.join(out, "samples.csv"), [f"x{i}" for i in range(dim)], X)
    return EXIT_OK


def _kv(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise argparse.ArgumentTypeError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="probsurf", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a surface from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")

    e = sub.add_parser("eval", help="recompute metrics for a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")

    d = sub.add_parser("diag", help="kernel diagnostics for a checkpoint")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--mode", choices=("scan", "gramian", "differential"), required=True)
    d.add_argument("--probes", type=int, default=100)
    d.add_argument("--kind", choices=kernel.KINDS, default="raw")
    d.add_argument("--delta", type=float, action="append")
    d.add_argument("--batch", type=int)
    d.add_argument("--seed", type=int)
    d.add_argument("--out", required=True)

    f = sub.add_parser("feasibility", help="numeric feasibility check of an instance")
    f.add_argument("--instance", required=True)
    f.add_argument("--param", action="append", metavar="KEY=VALUE")
    f.add_argument("--grid-size", type=int)
    f.add_argument("--out")

    s = sub.add_parser("sample", help="dump distribution samples to CSV")
    s.add_argument("--distribution", default="columns", choices=("columns", "transformed_columns", "matrix"))
    s.add_argument("--dim", type=int, default=1)
    s.add_argument("--count", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "train":
        return run_train(args.config, args.seed, args.out)
    if args.command == "eval":
        try:
            overrides = _kv(args.set)
        except argparse.ArgumentTypeError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return run_eval(args.checkpoint, args.seed, args.out, overrides)
    if args.command == "diag":
        return run_diag(args.checkpoint, args.mode, args.out, args.probes, args.kind, tuple(args.delta or (1e-3,)), args.seed, args.batch)
    if args.command == "feasibility":
        params = {k: float(v) for k, v in _kv(args.param).items()}
        return run_feasibility(args.instance, params, args.grid_size, args.out)
    return run_sample(args.distribution, args.dim, args.count, args.seed, args.out)


if __name__ == "__main__":
    sys.exit(main())
