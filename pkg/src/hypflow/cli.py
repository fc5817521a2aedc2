"""Command-line entry point: ``hypflow {train,eval,sample,export-poincare}``.

Exit codes: 0 ok, 2 usage or bad input, 3 numeric abort, 4 checkpoint
version mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import lorentz as L
from . import persist as P
from . import poincare as PC
from . import training as T
from .errors import NumericError
from .targets import make_target, sample_dataset

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_VERSION = 0, 2, 3, 4

log = logging.getLogger("hypflow")


class UsageError(Exception):
    pass


def _sibling(path: str | Path, suffix: str) -> Path:
    path = Path(path)
    return path.with_name(path.stem + suffix)


def _density_target(spec):
    target = make_target(spec)
    return target if target.log_prob is not None else None


def report_document(report: T.TrainReport, run: P.RunConfig, data_radius: float) -> dict:
    """Report as a JSON-ready dict. Timing is kept apart from the metrics,
    which are reproducible bit for bit."""
    metrics = report.to_dict()
    wall = metrics.pop("wall_clock")
    return {"metrics": metrics, "timing": {"wall_clock_seconds": wall},
            "target": run.target.kind, "flow": run.train.flow, "dim": run.train.dim,
            "data_radius": data_radius, "count": run.count}


def cmd_train(args) -> int:
    run = P.load_config(args.config)
    if args.seed is not None:
        run.train.seed = args.seed
    data_radius = run.target.radius
    if args.data:
        dataset = P.read_points(args.data)
    else:
        dataset = sample_dataset(run.target, run.count)
    if len(dataset) == 0:
        raise UsageError("dataset is empty")
    stack, report = T.train(run.train, dataset, data_radius, _density_target(run.target))
    P.save_checkpoint(args.out, stack, run.train, run.target, data_radius)
    doc = report_document(report, run, data_radius)
    P.atomic_write(_sibling(args.out, ".report.json"), json.dumps(doc, indent=1) + "\n")
    if not args.data:
        P.write_points(_sibling(args.out, ".data.csv"), dataset,
                       [f"target={run.target.kind} radius={data_radius!r} count={run.count}"])
    print(json.dumps(doc["metrics"]))
    return EXIT_OK


def cmd_eval(args) -> int:
    stack, config, spec, data_radius = P.load_checkpoint(args.checkpoint)
    data = P.read_points(args.data)
    if len(data) == 0:
        raise UsageError(f"{args.data}: dataset is empty")
    if data.shape[1] != stack.dim + 1:
        raise UsageError(f"{args.data}: expected {stack.dim + 1} columns, got {data.shape[1]}")
    L.check_on_hyperboloid(data, data_radius)
    metrics = T.evaluate(stack, data, data_radius, config.eval_samples,
                         seed=0 if args.seed is None else args.seed,
                         target=_density_target(spec))
    text = json.dumps(metrics)
    if args.out:
        P.atomic_write(args.out, text + "\n")
    print(text)
    return EXIT_OK


def cmd_sample(args) -> int:
    stack, _, _, data_radius = P.load_checkpoint(args.checkpoint)
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    pts = T.sample_data(stack, args.count, 0 if args.seed is None else args.seed, data_radius)
    L.check_on_hyperboloid(pts, data_radius)
    P.write_points(args.out, pts, [f"radius={data_radius!r} curvature={-data_radius ** -2!r}"])
    return EXIT_OK


def cmd_export_poincare(args) -> int:
    stack, _, _, data_radius = P.load_checkpoint(args.checkpoint)
    if stack.dim != 2:
        raise UsageError(f"export-poincare needs a 2-dimensional model, got dim {stack.dim}")
    pts, logd, area = PC.density_grid(stack, args.grid, data_radius)
    h = 2.0 * data_radius / args.grid
    header = [
        f"radius={data_radius!r} curvature={-data_radius ** -2!r}",
        f"grid={args.grid}x{args.grid} cell-centred on [-R,R]^2, cell_side={h!r} "
        f"cell_area={area!r}, cells with |p|<R only",
        "log_density is w.r.t. Lebesgue measure on disk coordinates: "
        "log p(x(p)) + 2*log(2R^2/(R^2-|p|^2))",
        "integrated mass ~= sum(exp(log_density)) * cell_area",
    ]
    P.write_csv(args.out, ["p1", "p2", "log_density"], np.column_stack([pts, logd]), header)
    seed = 0 if args.seed is None else args.seed
    samples = L.to_poincare(T.sample_data(stack, args.count, seed, data_radius), data_radius)
    P.write_csv(_sibling(args.out, ".samples.csv"), ["p1", "p2"], samples,
                [f"radius={data_radius!r} count={args.count} seed={seed}"])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypflow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a flow and write a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help="CSV of Lorentz points (default: sample the target)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a dataset with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="draw points from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("export-poincare", help="density grid and samples in the Poincare disk")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grid", type=int, default=200)
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_poincare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except P.VersionMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERSION
    except NumericError as exc:
        print(f"error: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, P.ConfigError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
