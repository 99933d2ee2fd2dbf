"""Command line surface: convert, split, train, gridsearch, eval, map.

Every subcommand writes its artifacts into the configured output directory
and exits 0; failures exit 1 with a single machine-parseable line
``ERROR <code>: <message>`` on stderr (argparse usage errors exit 2).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint
from .config import RunConfig, parse_config, write_resolved_config
from .data import (
    check_pair,
    convert_raw,
    export_split,
    import_split,
    load_cube,
    load_labels,
    load_sidecar,
    fit_band_stats,
    standardize,
    stratified_split,
)
from .errors import DataError, MsrnError
from .evaluate import evaluate_split, render_map, write_map, write_metrics_report
from .model import build_model
from .train import TrainData, lr_grid_search, train_loop


def _parse_dims(text: str):
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise DataError(f"dims must be comma-separated integers, got {text!r}")


def _parse_fractions(text: str):
    parts = text.split(",")
    if len(parts) != 2:
        raise DataError(f"fractions must be 'f_train,f_val', got {text!r}")
    return float(parts[0]), float(parts[1])


def _load_scene(config: RunConfig):
    cube = load_cube(config.cube)
    labels = load_labels(config.labels)
    sidecar = load_sidecar(config.sidecar)
    check_pair(cube, labels)
    if labels.num_classes > sidecar.num_classes:
        raise DataError(
            f"labels use {labels.num_classes} classes but sidecar names only "
            f"{sidecar.num_classes}")
    return cube, labels, sidecar


def _load_split(config: RunConfig, labels):
    if config.split:
        return import_split(config.split, labels)
    return stratified_split(labels, config.train_fraction, config.val_fraction,
                            config.seed)


def _prepare_training_cube(config: RunConfig, cube, split):
    if not config.standardize:
        return cube
    mean, std = fit_band_stats(cube, split.train)
    return standardize(cube, mean, std)


def _apply_checkpoint_stats(checkpoint, cube):
    stats = checkpoint.band_stats()
    if stats is None:
        return cube
    return standardize(cube, *stats)


def _begin_run(config: RunConfig):
    os.makedirs(config.output_dir, exist_ok=True)
    write_resolved_config(config, os.path.join(config.output_dir,
                                               "resolved_config.json"))


def cmd_convert(args) -> int:
    convert_raw(args.raw, _parse_dims(args.dims), args.out, kind=args.kind,
                raw_dtype=args.raw_dtype)
    print(f"wrote {args.out}")
    return 0


def cmd_split(args) -> int:
    labels = load_labels(args.labels)
    if args.import_path:
        split = import_split(args.import_path, labels)
    else:
        if args.fractions is None:
            raise DataError("either --fractions or --import is required")
        f_train, f_val = _parse_fractions(args.fractions)
        split = stratified_split(labels, f_train, f_val, args.seed)
    export_split(args.out, split)
    totals = ", ".join(f"{p}={len(split.part(p))}" for p in ("train", "val", "test"))
    print(f"wrote {args.out} ({totals})")
    return 0


def cmd_train(args) -> int:
    config = parse_config(args.config)
    _begin_run(config)
    cube, labels, sidecar = _load_scene(config)
    split = _load_split(config, labels)
    export_split(os.path.join(config.output_dir, "split.json"), split)
    cube = _prepare_training_cube(config, cube, split)
    model = build_model(config.model_spec(cube.bands, sidecar.num_classes),
                        np.random.default_rng(config.seed))
    data = TrainData(cube=cube, labels=labels, split=split)
    checkpoint_path = os.path.join(config.output_dir, "checkpoint.msrn")
    history_path = os.path.join(config.output_dir, "history.json")
    checkpoint, history = train_loop(model, data, config.train_config(),
                                     checkpoint_path, history_path)
    meta = checkpoint.training
    print(f"trained {len(history.epochs)} epoch(s); best val OA "
          f"{meta['val_oa']:.4f} at epoch {meta['epoch']}; "
          f"checkpoint {checkpoint_path}")
    return 0


def cmd_gridsearch(args) -> int:
    config = parse_config(args.config)
    _begin_run(config)
    cube, labels, sidecar = _load_scene(config)
    split = _load_split(config, labels)
    export_split(os.path.join(config.output_dir, "split.json"), split)
    cube = _prepare_training_cube(config, cube, split)
    data = TrainData(cube=cube, labels=labels, split=split)
    table_path = os.path.join(config.output_dir, "grid_search.json")
    table = lr_grid_search(config.model_spec(cube.bands, sidecar.num_classes),
                           data, config.train_config(), config.output_dir,
                           table_path)
    for row in table["results"]:
        print(f"lr {row['learning_rate']:.5g}: val OA {row['val_oa']:.4f} "
              f"({row['epochs_run']} epochs)")
    print(f"selected lr {table['selected_rate']:.5g}; table {table_path}")
    return 0


def cmd_eval(args) -> int:
    config = parse_config(args.config)
    _begin_run(config)
    cube, labels, _ = _load_scene(config)
    split = _load_split(config, labels)
    checkpoint = load_checkpoint(args.checkpoint)
    cube = _apply_checkpoint_stats(checkpoint, cube)
    model = checkpoint.restore()
    report = evaluate_split(model, cube, labels, split, args.part,
                            batch_size=config.batch_size)
    out_path = os.path.join(config.output_dir, f"metrics_{args.part}.json")
    write_metrics_report(out_path, report)
    print(f"{args.part}: OA {report['oa_pct']:.2f}% AA {report['aa_pct']:.2f}% "
          f"Kappa*100 {report['kappa_x100']:.2f}; report {out_path}")
    return 0


def cmd_map(args) -> int:
    config = parse_config(args.config)
    _begin_run(config)
    cube, labels, sidecar = _load_scene(config)
    checkpoint = load_checkpoint(args.checkpoint)
    cube = _apply_checkpoint_stats(checkpoint, cube)
    model = checkpoint.restore()
    ppm = render_map(model, cube, labels, sidecar,
                     mask_unlabeled=args.mask_unlabeled,
                     batch_size=config.batch_size)
    write_map(args.out, ppm)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msrn",
        description="Multi-scale residual network for hyperspectral "
                    "image classification")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="raw band-sequential array -> HSIC/HSIL")
    p.add_argument("--raw", required=True)
    p.add_argument("--dims", required=True, help="H,W,B for cubes; H,W for labels")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=["cube", "labels"], default="cube")
    p.add_argument("--raw-dtype", choices=["f4", "f8", "u2", "u1"], default="f4")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("split", help="emit or import a train/val/test split")
    p.add_argument("--labels", required=True)
    p.add_argument("--fractions", help="f_train,f_val")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--import", dest="import_path",
                   help="split file with per-class counts or pixel indices")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train and checkpoint the best-on-val model")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gridsearch", help="train once per learning rate, pick best")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split part")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--part", choices=["train", "val", "test"], required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("map", help="render a classification map (PPM)")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mask-unlabeled", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_map)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MsrnError as exc:
        print(f"ERROR {exc.code}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"ERROR io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
