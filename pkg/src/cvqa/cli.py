"""Command-line entry point.

Commands::

    cvqa run       --config cfg.yaml [--features FILE] [--seed S] [--jobs N] [--out-dir DIR] [--format F]
    cvqa sweep     --config cfg.yaml --axis {memory_size,strategy,alpha_beta} [...]
    cvqa gradcheck [--config cfg.yaml] [--instances N] [--dim D]
    cvqa gen-data  --config cfg.yaml --out FILE [--seed S]
    cvqa ingest    --features FILE

Failures print one line ``cvqa-error[<kind>] <message>`` to stderr.  Exit
codes: 0 success, 1 runtime failure, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from . import config as config_mod
from .config import SWEEP_AXES, ExperimentConfig
from .datagen import TaskStream, export_stream, generate_stream, ingest_features
from .errors import ConfigInvalid, CvqaError, ParseError, ShapeMismatch
from .gradcheck import ABS_TOL, REL_TOL, check_seed, summarize
from .harness.trainer import report_rows, rows_to_csv, run_experiment
from .io import atomic_write_text

log = logging.getLogger("cvqa")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
MAX_GRADCHECK_DIM = 16


class CliFailure(Exception):
    def __init__(self, kind: str, message: str, code: int):
        super().__init__(message)
        self.kind = kind
        self.code = code


def _fail(kind: str, message: str, code: int) -> int:
    text = " ".join(str(message).split())
    print(f"cvqa-error[{kind}] {text}", file=sys.stderr)
    return code


def _load_config(args) -> ExperimentConfig:
    if args.config is None:
        cfg = ExperimentConfig()
        config_mod.apply_env(cfg, os.environ)
    else:
        try:
            cfg = config_mod.load(args.config)
        except FileNotFoundError:
            raise CliFailure("config", f"config file not found: {args.config}", EXIT_CONFIG) from None
        except ConfigInvalid as exc:
            where = f"{exc.field}: " if exc.field else ""
            raise CliFailure("config", f"{where}{exc}", EXIT_CONFIG) from None
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [args.seed]
    if getattr(args, "out_dir", None):
        cfg.output.out_dir = args.out_dir
    if getattr(args, "format", None):
        cfg.output.format = args.format
    return cfg


def _stream(cfg: ExperimentConfig, features: str | None) -> TaskStream:
    if features:
        try:
            return ingest_features(features)
        except (ParseError, ShapeMismatch) as exc:
            raise CliFailure("parse", str(exc), EXIT_RUNTIME) from None
        except FileNotFoundError:
            raise CliFailure("io", f"feature file not found: {features}", EXIT_RUNTIME) from None
    return generate_stream(cfg.stream, cfg.stream_seed)


def _print_summary(label: str, report: dict) -> None:
    for paradigm, agg in report["aggregate"].items():
        if agg["ap_mean"] is None:
            continue
        af = "null" if agg["af_mean"] is None else f"{agg['af_mean']:.4f}+-{agg['af_std']:.4f}"
        print(f"{label} {paradigm}: AP={agg['ap_mean']:.4f}+-{agg['ap_std']:.4f} AF={af}")


def cmd_run(args) -> int:
    cfg = _load_config(args)
    stream = _stream(cfg, args.features)
    report = run_experiment(cfg, stream, jobs=args.jobs, out_dir=cfg.output.out_dir)
    _print_summary("run", report)
    return EXIT_OK


def sweep_points(cfg: ExperimentConfig, axis: str) -> list[tuple[str, ExperimentConfig]]:
    ab = cfg.ablation
    if axis == "memory_size":
        sizes = cfg.sweep.resolved_memory_sizes()
        return [(f"mem{m}", cfg.replace(ablation=dataclasses.replace(ab, buffer_capacity=m))) for m in sizes]
    if axis == "strategy":
        return [(s, cfg.replace(ablation=dataclasses.replace(ab, strategy=s))) for s in cfg.sweep.strategies]
    if axis == "alpha_beta":
        vals = cfg.sweep.alpha_beta_values
        return [
            (f"a{a:g}_b{b:g}", cfg.replace(ablation=dataclasses.replace(ab, alpha_beta=(a, b))))
            for a in vals for b in vals
        ]
    raise CliFailure("config", f"unknown sweep axis {axis!r}", EXIT_CONFIG)


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    stream = _stream(cfg, args.features)
    out_dir = Path(cfg.output.out_dir)
    merged = []
    for label, point_cfg in sweep_points(cfg, args.axis):
        report = run_experiment(point_cfg, stream, jobs=args.jobs, out_dir=out_dir,
                                stem=f"{args.axis}_{label}")
        _print_summary(f"{args.axis}={label}", report)
        merged.extend({"sweep_point": label, **row} for row in report_rows(report))
    atomic_write_text(out_dir / f"sweep_{args.axis}.csv", rows_to_csv(merged, extra_columns=("sweep_point",)))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.dim > MAX_GRADCHECK_DIM or args.dim < 1:
        raise CliFailure("config", f"gradcheck dimension must lie in [1, {MAX_GRADCHECK_DIM}], got {args.dim}",
                         EXIT_CONFIG)
    base = _load_config(args).model if args.config else None
    results = []
    for seed in range(args.instances):
        results.extend(check_seed(seed, corrupt=args.corrupt, base=base, d=args.dim, k=args.k, T=args.steps))
    rows = summarize(results)
    print(f"{'loss':<8} {'group':<8} {'max_abs':>12} {'max_rel':>12}  status")
    for r in rows:
        print(f"{r.loss:<8} {r.group:<8} {r.max_abs:12.3e} {r.max_rel:12.3e}  {'pass' if r.ok else 'FAIL'}")
    failing = sorted({f"{r.loss}/{r.group}" for r in rows if not r.ok})
    if failing:
        return _fail("gradcheck", "gradient mismatch (tolerance max(%g abs, %g rel)) in: %s"
                     % (ABS_TOL, REL_TOL, ", ".join(failing)), EXIT_RUNTIME)
    print(f"all {len(rows)} loss/group pairs within tolerance over {args.instances} instances")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg = _load_config(argparse.Namespace(config=args.config))
    seed = cfg.stream_seed if args.seed is None else args.seed
    stream = generate_stream(cfg.stream, seed)
    export_stream(stream, args.out)
    print(f"wrote {len(stream.tasks)} tasks to {args.out}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    stream = _stream(ExperimentConfig(), args.features)
    for task in stream.tasks:
        print(f"task {task.task_id} ({task.name}): train={len(task.train)} test={len(task.test)} "
              f"novel={len(task.novel)}")
    print(f"ok: d={stream.d} n={stream.n} L={stream.L} T={stream.T} vocab={stream.vocab}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvqa", description="Continual multimodal learning lab")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_flags(p):
        p.add_argument("--config", required=True)
        p.add_argument("--features", help="ingest this feature file instead of generating a stream")
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out-dir")
        p.add_argument("--format", choices=config_mod.FORMATS)

    p = sub.add_parser("run", help="train and evaluate over a task stream")
    experiment_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run one report per sweep point")
    experiment_flags(p)
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--config")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--steps", type=int, default=2, help="answer length T")
    p.add_argument("--corrupt", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gen-data", help="export a synthetic stream as a feature file")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="stream seed (defaults to the config's stream_seed)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("ingest", help="validate a feature file")
    p.add_argument("--features", required=True)
    p.set_defaults(func=cmd_ingest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliFailure as exc:
        return _fail(exc.kind, str(exc), exc.code)
    except ConfigInvalid as exc:
        where = f"{exc.field}: " if exc.field else ""
        return _fail("config", f"{where}{exc}", EXIT_CONFIG)
    except CvqaError as exc:
        return _fail("runtime", f"{type(exc).__name__}: {exc}", EXIT_RUNTIME)
    except OSError as exc:
        return _fail("io", str(exc), EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())
