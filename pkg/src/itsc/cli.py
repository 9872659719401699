"""Command-line front end.

Subcommands: ``mask``, ``train``, ``eval``, ``export-features``.
Exit codes: 0 success, 2 usage or validation error, 3 runtime or numeric
failure. ``ITSC_OUTPUT_ROOT`` overrides the root directory for run outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import data
from .config import RunConfig, parse_config_file, write_config_file
from .losses import LossWeights
from .model import Arch, CheckpointError, ItscModel
from .training import NonFiniteLossError, evaluate, train, write_loss_csv

log = logging.getLogger("itsc")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
OUTPUT_ROOT_ENV = "ITSC_OUTPUT_ROOT"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Pipeline pieces (also used programmatically)
# ---------------------------------------------------------------------------

def mask_dir_for(dataset_path) -> Path:
    name, train_path, _ = data.resolve_ucr_paths(dataset_path)
    return train_path.parent / "masks"


def prepare_data(dataset: str, missing_ratio: float, mask_seed: int) -> data.DatasetBundle:
    """Load, mask (through the on-disk cache) and normalise a dataset."""
    bundle = data.load_ucr(dataset)
    if missing_ratio > 0:
        mdir = mask_dir_for(dataset)
        data.ensure_mask_cache(bundle, mdir, missing_ratio, mask_seed)
        bundle = data.apply_mask_cache(bundle, mdir, missing_ratio, mask_seed)
    return data.znormalize(bundle)


def build_model(cfg: RunConfig, bundle: data.DatasetBundle) -> ItscModel:
    arch = Arch(
        input_size=bundle.dims, num_classes=bundle.num_classes, hidden_size=cfg.hidden_size,
        num_layers=cfg.num_layers, scales=cfg.scales, branch_channels=cfg.branch_channels,
        dilation=cfg.dilation, use_tim=not cfg.zero_fill, use_msfl=not cfg.no_msfl,
    )
    return ItscModel(arch, seed=cfg.seed, dtype=np.dtype(cfg.dtype))


def default_run_dir(cfg: RunConfig) -> Path:
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, cfg.output_dir))
    name = Path(cfg.dataset).name or "run"
    return root / f"{name}-r{cfg.missing_ratio:g}-s{cfg.seed}-{cfg.hash()}"


def run_training(cfg: RunConfig, run_dir=None) -> dict:
    """Train and evaluate per ``cfg``; writes ``config.txt``, ``loss.csv``,
    ``model.ckpt`` and ``report.json`` into ``run_dir`` and returns the
    report. On a non-finite loss the partial history and a failure report
    are written before the error propagates."""
    cfg.validate()
    bundle = prepare_data(cfg.dataset, cfg.missing_ratio, cfg.effective_mask_seed)
    model = build_model(cfg, bundle)
    run_dir = Path(run_dir) if run_dir is not None else default_run_dir(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_config_file(cfg, run_dir / "config.txt")
    paths = {"loss_history": str(run_dir / "loss.csv"), "checkpoint": str(run_dir / "model.ckpt")}
    batch = cfg.effective_batch_size(len(bundle.train))
    history = []
    report = {
        "config": cfg.to_dict(), "config_hash": cfg.hash(), "dataset": bundle.name,
        "batch_size": batch, "num_classes": bundle.num_classes, "length": bundle.length,
        "train_missing_fraction": bundle.train.missing_fraction(),
        "test_missing_fraction": bundle.test.missing_fraction(), **paths,
    }
    try:
        train(model, bundle.train, LossWeights(cfg.alpha, cfg.beta), cfg.epochs, batch,
              cfg.lr, cfg.seed, on_epoch=history.append)
    except NonFiniteLossError as e:
        write_loss_csv(history, paths["loss_history"])
        report.update(status="failed", error=str(e), epoch_seconds=[r.seconds for r in history])
        (run_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
        raise
    write_loss_csv(history, paths["loss_history"])
    model.save(paths["checkpoint"], config=cfg.to_dict(), config_hash=cfg.hash(), seed=cfg.seed,
               extra={"dataset": bundle.name, "length": bundle.length})
    test_metrics = evaluate(model, bundle.test)
    report.update(
        status="ok",
        metrics=test_metrics.to_dict(),
        final_train_acc=history[-1].train_acc if history else None,
        epoch_seconds=[r.seconds for r in history],
        finished_at=time.strftime("%Y-%m-%dT%H:%M:%S"),
    )
    (run_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return report


def load_checkpoint_for(checkpoint, dataset: str, ratio: float | None, mask_seed: int | None):
    model, header = ItscModel.load(checkpoint)
    cfg = header.get("config", {})
    ratio = cfg.get("missing_ratio", 0.0) if ratio is None else ratio
    if mask_seed is None:
        mask_seed = cfg.get("mask_seed")
        mask_seed = cfg.get("seed", 0) if mask_seed is None else mask_seed
    bundle = prepare_data(dataset, ratio, mask_seed)
    if bundle.dims != model.arch.input_size or bundle.num_classes != model.arch.num_classes:
        raise CheckpointError(
            f"checkpoint expects {model.arch.input_size} dims / {model.arch.num_classes} classes, "
            f"dataset has {bundle.dims} / {bundle.num_classes}")
    if "length" in header and header["length"] != bundle.length:
        raise CheckpointError(f"checkpoint trained on length {header['length']}, dataset has {bundle.length}")
    return model, header, bundle


def export_features(model: ItscModel, split: data.Split, path) -> int:
    feats = np.concatenate([model.features(split.values[s:s + 256], split.masks[s:s + 256])
                            for s in range(0, len(split), 256)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"] + [f"f{j}" for j in range(feats.shape[1])])
        for sid, lab, row in zip(split.ids, split.labels, feats):
            w.writerow([sid, int(lab)] + [repr(float(v)) for v in row])
    return len(feats)


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------

_FLAG_FIELDS = [f.name for f in fields(RunConfig) if f.name != "dataset"]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file; flags given here override it")
    p.add_argument("--dataset", help="dataset directory holding <Name>_TRAIN/_TEST files")
    for f in fields(RunConfig):
        if f.name == "dataset":
            continue
        flag = "--" + f.name.replace("_", "-")
        if "bool" in str(f.type):
            p.add_argument(flag, action="store_true", default=None)
        else:
            caster = int if "int" in str(f.type) else float if "float" in str(f.type) else str
            p.add_argument(flag, type=caster, default=None)
    p.add_argument("--ratio", dest="missing_ratio", type=float, default=None, help="alias of --missing-ratio")


def config_from_args(args) -> RunConfig:
    values = {}
    if args.config:
        values.update(parse_config_file(args.config))
    for name in ["dataset"] + _FLAG_FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    cfg = RunConfig(**values)
    if not cfg.dataset:
        raise UsageError("--dataset is required")
    try:
        cfg.validate()
    except ValueError as e:
        raise UsageError(str(e)) from None
    return cfg


def _ratio(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"ratio must lie in (0, 1), got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="itsc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask", help="synthesise and cache MCAR masks")
    p.add_argument("--dataset", required=True)
    p.add_argument("--ratio", type=_ratio, required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train and evaluate a model")
    _add_config_flags(p)

    for name in ("eval", "export-features"):
        p = sub.add_parser(name)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--dataset", required=True)
        p.add_argument("--ratio", type=float, default=None, help="missing ratio (default: the checkpoint's)")
        p.add_argument("--mask-seed", type=int, default=None)
        p.add_argument("--output", help="output file")
        if name == "eval":
            p.add_argument("--config", help="refuse to evaluate if this config's hash differs from the checkpoint's")
        else:
            p.add_argument("--split", choices=["train", "test"], default="test")
    return ap


def _cmd_mask(args) -> int:
    bundle = data.load_ucr(args.dataset)
    for path in data.ensure_mask_cache(bundle, mask_dir_for(args.dataset), args.ratio, args.seed):
        print(path)
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = config_from_args(args)
    report = run_training(cfg)
    print(f"run directory: {Path(report['checkpoint']).parent}")
    m = report["metrics"]
    print(f"{'metric':<10} {'value':>8}")
    for k in ("accuracy", "precision", "recall", "f1"):
        print(f"{k:<10} {m[k]:>8.4f}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    model, header, bundle = load_checkpoint_for(args.checkpoint, args.dataset, args.ratio, args.mask_seed)
    if args.config:
        cfg = RunConfig(**parse_config_file(args.config))
        if cfg.hash() != header.get("config_hash"):
            raise UsageError(f"config hash {cfg.hash()} does not match checkpoint {header.get('config_hash')}")
    metrics = evaluate(model, bundle.test)
    out = {"checkpoint": str(args.checkpoint), "config_hash": header.get("config_hash"),
           "dataset": bundle.name, "metrics": metrics.to_dict()}
    path = Path(args.output) if args.output else Path(args.checkpoint).with_name("eval.json")
    path.write_text(json.dumps(out, indent=2, sort_keys=True))
    print(metrics.table())
    return EXIT_OK


def _cmd_export(args) -> int:
    model, header, bundle = load_checkpoint_for(args.checkpoint, args.dataset, args.ratio, args.mask_seed)
    path = Path(args.output) if args.output else Path(args.checkpoint).with_name(f"features_{args.split}.csv")
    n = export_features(model, getattr(bundle, args.split), path)
    print(f"wrote {n} rows to {path}")
    return EXIT_OK


COMMANDS = {"mask": _cmd_mask, "train": _cmd_train, "eval": _cmd_eval, "export-features": _cmd_export}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValueError, FileNotFoundError, FileExistsError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, ArithmeticError, RuntimeError) as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
