"""Command line entry point: ``pampose {train,eval,refine,ablate,classify,gen-data}``.

Run-config flags are generated from the flat config keys (``--epochs``,
``--pam.reduction-ratio``, ``--no-pam.enable-gap`` ...). Values given on the
command line override those read from ``--config``.

Exit codes: 0 success, 2 invalid input (config, checkpoint, file format),
3 training diverged. A sweep with a failed arm exits 1 (3 if it diverged).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import CheckpointVersionError
from .data import FormatError, write_cloud, write_pose
from .geometry import PointCloud
from .harness.ablation import SWEEPS, ablation_sweep
from .harness.classify import ClassifyConfig, run_classification
from .harness.config import ConfigError, RunConfig, load_config
from .harness import train as H

EXIT_OK, EXIT_FAILED, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2, 3

def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file of flat config keys")
    for key, default in RunConfig().to_flat().items():
        kw: dict = {"dest": key, "default": argparse.SUPPRESS}
        if isinstance(default, bool):
            kw["action"] = argparse.BooleanOptionalAction
        elif isinstance(default, list):
            kw.update(nargs="+", type=int if default and isinstance(default[0], int) else str)
        elif isinstance(default, int):
            kw["type"] = int
        elif isinstance(default, float):
            kw["type"] = float
        else:
            kw["type"] = str
        parser.add_argument(_flag(key), **kw)


def _overrides(args: argparse.Namespace) -> dict:
    keys = RunConfig().to_flat()
    return {k: v for k, v in vars(args).items() if k in keys}


def run_config(args: argparse.Namespace, base: RunConfig | None = None) -> RunConfig:
    """``--config`` file (else ``base``, else defaults) with command-line flags on top."""
    if args.config:
        base = load_config(args.config)
    return (base or RunConfig()).with_overrides(_overrides(args))


def _load(args) -> tuple[RunConfig, dict, dict | None]:
    stored, _, _ = H.load_run(args.checkpoint)
    stored = replace(stored, output_dir=None)  # never write over the training run by default
    return H.load_run(args.checkpoint, run_config(args, stored))


def _out_dir(config: RunConfig, fallback: str) -> Path:
    return Path(config.output_dir or fallback)


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    config = run_config(args)
    config = replace(config, output_dir=str(_out_dir(config, "runs/train")))
    result = H.train(config) if config.repeats == 1 else H.train_best_of(config)
    _summarize(result.report)
    print(f"wrote {result.output_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config, main, ref = _load(args)
    objects = H.build_objects(config)
    refiner = H.NetworkRefiner(H.frozen(ref), config, objects) if ref is not None else None
    report = H.evaluate(config, main, refiner, objects, metadata={"param_counts": H.param_counts(config, main, ref)})
    out = _out_dir(config, "runs/eval")
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.csv").write_text(report.to_csv())
    _summarize(report)
    return EXIT_OK


def cmd_refine(args) -> int:
    """Train the refiner on a checkpoint's frozen pose network and re-evaluate."""
    config, main, _ = _load(args)
    if config.refine_iters == 0:
        raise ConfigError("refine needs refine_iters >= 1")
    objects = H.build_objects(config)
    ref, curve = H.train_refiner(config, objects, main)
    counts = {"param_counts": H.param_counts(config, main, ref)}
    report = H.evaluate(config, main, H.NetworkRefiner(H.frozen(ref), config, objects), objects, metadata=counts)
    config = replace(config, output_dir=str(_out_dir(config, "runs/refine")))
    result = H.TrainResult(config, main, ref, report, curve)
    H.write_outputs(result)
    _summarize(report)
    return EXIT_OK


def cmd_ablate(args) -> int:
    base = run_config(args)
    spec = SWEEPS[args.sweep](base)
    out = _out_dir(base, f"runs/ablation_{args.sweep}")
    result = ablation_sweep(spec, out, workers=args.workers)
    for row in result.rows:
        print(f"{row.arm:>8}  {row.status:6}  params {row.posenet_params:>7} ({row.delta_params:+d})  "
              f"auc {row.unrefined_auc:.4f} -> {row.refined_auc:.4f}")
    if result.ok:
        return EXIT_OK
    return EXIT_DIVERGED if any(r.error.startswith("DivergenceError") for r in result.rows) else EXIT_FAILED


def cmd_classify(args) -> int:
    config = ClassifyConfig(
        seed=args.seed,
        train_per_class=args.train_per_class,
        test_per_class=args.test_per_class,
        n_points=args.n_points,
        upright=not args.full_rotation,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
    )
    report = run_classification(config)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "classify_report.json").write_text(report.to_json() + "\n")
    (out / "classify_report.csv").write_text(report.to_csv())
    for arm in report.arms:
        print(f"{arm.arm:>7}  accuracy {arm.accuracy:.4f}  params {arm.params}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    """Export seeded models and held-out scenes as PLY clouds plus pose files."""
    config = run_config(args)
    out = _out_dir(config, "runs/data")
    out.mkdir(parents=True, exist_ok=True)
    objects = H.build_objects(config)
    for model in objects:
        write_cloud(out / f"model_{model.id}.ply", PointCloud(model.points, model.colors))
    split = H.TRAIN if args.split == "train" else H.EVAL
    for i in range(args.count):
        scene = H.make_scene(config, objects, split, 0, i)
        stem = out / f"scene_{i:04d}_{objects[scene.obj_index].id}"
        write_cloud(stem.with_suffix(".ply"), scene.sample.cloud)
        write_pose(stem.with_suffix(".pose"), scene.sample.gt)
    print(f"wrote {len(objects)} models and {args.count} scenes to {out}")
    return EXIT_OK


def _summarize(report) -> None:
    for stage in (report.unrefined, report.refined):
        a = stage.aggregate
        print(f"{stage.stage:>9}  auc {a['auc']:.4f}  <2cm {a['acc_at_2cm']:.4f}  mean error/diameter {a['mean_error_rel']:.4f}")


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pampose", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train posenet and refiner, evaluate, write report and checkpoint")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (
        ("eval", cmd_eval, "evaluate a checkpoint with and without refinement"),
        ("refine", cmd_refine, "train the refiner for a checkpoint's pose network"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--checkpoint", required=True)
        _add_run_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("ablate", help="run a paired ablation sweep")
    p.add_argument("--sweep", choices=sorted(SWEEPS), required=True)
    p.add_argument("--workers", type=int, default=1, help="arms trained in parallel threads")
    _add_run_flags(p)
    p.set_defaults(func=cmd_ablate)

    defaults = ClassifyConfig()
    p = sub.add_parser("classify", help="shape classification with and without PAM")
    p.add_argument("--seed", type=int, default=defaults.seed)
    p.add_argument("--train-per-class", type=int, default=defaults.train_per_class)
    p.add_argument("--test-per-class", type=int, default=defaults.test_per_class)
    p.add_argument("--n-points", type=int, default=defaults.n_points)
    p.add_argument("--full-rotation", action="store_true", help="uniform SO(3) poses instead of upright shapes")
    p.add_argument("--epochs", type=int, default=defaults.epochs)
    p.add_argument("--learning-rate", type=float, default=defaults.learning_rate)
    p.add_argument("--output-dir", default="runs/classify")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("gen-data", help="export seeded models and scenes (PLY + pose files)")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--split", choices=("train", "eval"), default="eval")
    _add_run_flags(p)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    try:
        return args.func(args)
    except H.DivergenceError as exc:
        print(f"pampose: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, CheckpointVersionError, FormatError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"pampose: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
