"""Command-line interface.

Subcommands:
  simulate  run a synthetic sweep and write rows/summary CSVs (+ SVG plot)
  gen       dump one synthetic task suite as CSV files
  check     run the invariant self-check suite
  har       run the activity-recognition study from local UCI files

A JSON config file can provide any simulate option; command-line flags
override file values.  All outputs are byte-reproducible for a given
config and seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__, har, harness, synthdata
from .errors import GeoermError, IngestionError

DESK_DEFAULTS = {
    "axis": "h",
    "values": [0.1, 0.5, 0.9],
    "reps": 10,
    "methods": ["GeoERM", "SingleTask", "Pooled"],
    "seed": 0,
    "eps": 0.1,
    "loss": "linear",
    "T": 10,
    "n": 100,
    "p": 30,
    "r": 5,
    "h": 0.5,
    "H": 2.0,
    "iterations": 500,
    "alpha": 0.01,
    "mu": 1e-3,
    "lam": None,
    "gamma": None,
    "plot": True,
}

_LOSS_BY_NAME = {"linear": "regression", "logistic": "classification"}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geoerm",
        description="Geometry-aware multi-task learning benchmark harness",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log per-fit progress")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a synthetic sweep")
    sim.add_argument("--config", type=Path, help="JSON config file")
    sim.add_argument("--axis", choices=harness.SWEEP_AXES)
    sim.add_argument("--values", type=str,
                     help="comma-separated sweep values, strictly increasing")
    sim.add_argument("--reps", type=int, help="replications per value")
    sim.add_argument("--methods", type=str,
                     help=f"comma-separated subset of {harness.METHOD_NAMES}")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--eps", type=float, help="outlier task fraction")
    sim.add_argument("--loss", choices=("linear", "logistic"))
    sim.add_argument("--out-dir", type=Path, default=Path("out"))
    plot = sim.add_mutually_exclusive_group()
    plot.add_argument("--plot", dest="plot", action="store_true", default=None)
    plot.add_argument("--no-plot", dest="plot", action="store_false")
    sim.add_argument("--check", action="store_true",
                     help="run the self-check suite first; abort on failure")
    for name in ("T", "n", "p", "r"):
        sim.add_argument(f"--{name}", type=int, help=f"fixed {name}")
    sim.add_argument("--h", type=float, help="fixed heterogeneity")
    sim.add_argument("--iterations", type=int)
    sim.add_argument("--alpha", type=float)
    sim.add_argument("--lam", type=float)
    sim.add_argument("--gamma", type=float)

    gen = sub.add_parser("gen", help="dump one synthetic suite as CSVs")
    gen.add_argument("--out-dir", type=Path, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--eps", type=float, default=0.1)
    gen.add_argument("--loss", choices=("linear", "logistic"), default="linear")
    for name, default in (("T", 10), ("n", 100), ("p", 30), ("r", 5)):
        gen.add_argument(f"--{name}", type=int, default=default)
    gen.add_argument("--h", type=float, default=0.5)

    sub.add_parser("check", help="run the invariant self-check suite")

    harp = sub.add_parser("har", help="activity-recognition study")
    harp.add_argument("--data-dir", type=Path, required=True,
                      help="directory with the UCI train/ and test/ files")
    harp.add_argument("--methods", type=str, default="GeoERM,SingleTask")
    harp.add_argument("--r", type=str, default="5,10,15",
                      help="comma-separated latent dimensions")
    harp.add_argument("--reps", type=int, default=10)
    harp.add_argument("--seed", type=int, default=0)
    harp.add_argument("--iterations", type=int, default=500)
    harp.add_argument("--out-dir", type=Path, default=Path("out"))
    return parser


def _resolve_simulate_options(args: argparse.Namespace) -> dict:
    opts = dict(DESK_DEFAULTS)
    if args.config is not None:
        with open(args.config) as fh:
            file_opts = json.load(fh)
        unknown = set(file_opts) - set(DESK_DEFAULTS)
        if unknown:
            raise GeoermError(f"unknown config keys: {sorted(unknown)}")
        opts.update(file_opts)
    overrides = {
        "axis": args.axis,
        "reps": args.reps,
        "seed": args.seed,
        "eps": args.eps,
        "loss": args.loss,
        "T": args.T,
        "n": args.n,
        "p": args.p,
        "r": args.r,
        "h": args.h,
        "iterations": args.iterations,
        "alpha": args.alpha,
        "lam": args.lam,
        "gamma": args.gamma,
        "plot": args.plot,
    }
    if args.values is not None:
        overrides["values"] = [float(v) for v in args.values.split(",")]
    if args.methods is not None:
        overrides["methods"] = args.methods.split(",")
    opts.update({k: v for k, v in overrides.items() if v is not None})
    return opts


def _cmd_simulate(args: argparse.Namespace) -> int:
    opts = _resolve_simulate_options(args)
    if args.check:
        report = harness.self_check()
        print(report.to_text())
        if not report.passed:
            print("self-check failed; aborting sweep", file=sys.stderr)
            return 1
    fixed = synthdata.ExperimentConfig(
        T=opts["T"], n=opts["n"], p=opts["p"], r=opts["r"], h=opts["h"],
        H=opts["H"], eps=opts["eps"], seed=opts["seed"],
        loss=_LOSS_BY_NAME[opts["loss"]],
        lam=opts["lam"], gamma=opts["gamma"], alpha=opts["alpha"],
        iterations=opts["iterations"], mu=opts["mu"],
    )
    spec = harness.SweepSpec(
        axis=opts["axis"], values=tuple(opts["values"]), fixed=fixed,
        replications=opts["reps"], methods=tuple(opts["methods"]),
    )
    rows = harness.run_sweep(spec)
    summary = harness.aggregate(rows)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    written = [
        harness.emit_csv(rows, out / "rows.csv"),
        harness.emit_csv(summary, out / "summary.csv"),
    ]
    if opts["plot"]:
        written.append(harness.emit_plot(summary, out / "sweep.svg"))
    written.append(harness.write_manifest(out / "run_manifest.json", {
        "command": "simulate",
        "options": _jsonable(opts),
        "outputs": sorted(p.name for p in written),
    }))
    for s in summary:
        print(f"{s.method} {s.axis}={s.value:g}: "
              f"mean={s.mean_error:.4f} sd={s.sd_error:.4f} (n={s.count})")
    print(f"wrote {len(written)} files to {out}")
    return 0


def _jsonable(opts: dict) -> dict:
    return {
        k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(opts.items())
    }


def _cmd_gen(args: argparse.Namespace) -> int:
    cfg = synthdata.ExperimentConfig(
        T=args.T, n=args.n, p=args.p, r=args.r, h=args.h,
        eps=args.eps, seed=args.seed, loss=_LOSS_BY_NAME[args.loss],
    )
    tasks, truth = synthdata.gen_suite(cfg)
    written = synthdata.dump_suite(tasks, truth, args.out_dir)
    harness.write_manifest(args.out_dir / "run_manifest.json", {
        "command": "gen",
        "options": {k: (str(v) if isinstance(v, Path) else v)
                    for k, v in sorted(vars(args).items())
                    if k not in ("command", "verbose", "func")},
        "outputs": sorted(p.name for p in written),
    })
    print(f"wrote {len(written)} files to {args.out_dir}")
    return 0


def _cmd_check(_args: argparse.Namespace) -> int:
    report = harness.self_check()
    print(report.to_text())
    return 0 if report.passed else 1


def _cmd_har(args: argparse.Namespace) -> int:
    try:
        ds = har.load_har(args.data_dir)
    except IngestionError as exc:
        print(
            f"error: {exc}\n"
            "Supply the UCI human-activity-recognition release directory "
            "(containing train/X_train.txt, train/y_train.txt, "
            "train/subject_train.txt and the test/ counterparts). "
            "The dataset is not downloaded automatically.",
            file=sys.stderr,
        )
        return 2
    ds = har.standardize_per_subject(ds)
    methods = args.methods.split(",")
    r_values = [int(v) for v in args.r.split(",")]
    report = har.run_har(ds, methods, r_values, seed=args.seed,
                         replications=args.reps, iterations=args.iterations)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    path = har.har_report_csv(report, out / "har_report.csv")
    harness.write_manifest(out / "run_manifest.json", {
        "command": "har",
        "options": {
            "methods": methods, "r_values": r_values, "seed": args.seed,
            "replications": args.reps, "data_dir": str(args.data_dir),
        },
        "outputs": [path.name],
    })
    for row in report.rows:
        print(f"{row.method} r={row.r}: {row.mean_error_pct:.2f}% "
              f"(sd {row.sd_error_pct:.2f}, cells {row.cells})")
    print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    handlers = {
        "simulate": _cmd_simulate,
        "gen": _cmd_gen,
        "check": _cmd_check,
        "har": _cmd_har,
    }
    try:
        return handlers[args.command](args)
    except GeoermError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
