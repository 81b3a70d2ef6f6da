"""Command-line interface: generate, train, eval, predict.

Configuration precedence, lowest to highest: built-in defaults, a JSON
config file (``--config`` flag, else the ``CHIRPVIT_CONFIG`` environment
variable), then individual command-line flags.  The config file holds up to
three sections, ``synth``, ``model``, and ``train``, whose keys mirror the
corresponding dataclass fields.  Every command echoes the fully resolved
configuration into its output directory so a run can be reproduced from its
artifacts alone.

Exit status: 0 when the requested artifacts were all written, 1 on any
package error (bad data, bad config, numeric failure), 2 on command-line
usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import __version__
from .data import (NormalizationStats, load_images, load_labels, normalize_labels,
                   preprocess_batch, prepare_training_data, split_dataset)
from .errors import ChirpVitError, ConfigurationError, DataError
from .evaluate import TARGET_NAMES, evaluate, format_prediction_report
from .model import ModelConfig, ViTModel, load_checkpoint
from .synth import SynthConfig, generate_dataset
from .train import TrainConfig, train

CONFIG_ENV_VAR = "CHIRPVIT_CONFIG"
CONFIG_SECTIONS = ("synth", "model", "train")


def _load_config_file(path: str | None) -> dict:
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR) or None
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"config file not found: {p}")
    try:
        with open(p) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError(f"config file {p} must hold a JSON object")
    unknown = set(doc) - set(CONFIG_SECTIONS)
    if unknown:
        raise ConfigurationError(
            f"unknown config section(s) {sorted(unknown)}; expected {CONFIG_SECTIONS}")
    return doc


def _build_dataclass(cls, section: dict, section_name: str, overrides: dict):
    """Instantiate a config dataclass from file section plus flag overrides."""
    fields = {f.name for f in dataclasses.fields(cls)}
    merged = {}
    for key, value in section.items():
        if key not in fields:
            raise ConfigurationError(
                f"{section_name}.{key} is not a recognized setting "
                f"(known: {sorted(fields)})")
        merged[key] = value
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    # JSON has no tuples; coerce the fields that want them
    for key in ("noise_range", "head_dims"):
        if merged.get(key) is not None and key in fields:
            merged[key] = tuple(merged[key])
    obj = cls(**merged)
    obj.validate()
    return obj


def _echo_config(out_dir: Path, command: str, **sections) -> None:
    doc = {"command": command, "version": __version__}
    for name, obj in sections.items():
        if obj is None:
            continue
        if dataclasses.is_dataclass(obj):
            d = dataclasses.asdict(obj)
            for k, v in d.items():
                if isinstance(v, tuple):
                    d[k] = list(v)
            doc[name] = d
        else:
            doc[name] = obj
    with open(out_dir / "config.json", "w") as fh:
        json.dump(doc, fh, indent=2)


# ---- subcommands ------------------------------------------------------------

def cmd_generate(args) -> int:
    file_cfg = _load_config_file(args.config)
    synth = _build_dataclass(SynthConfig, file_cfg.get("synth", {}), "synth",
                             {"seed": args.seed})
    out = Path(args.out)
    manifest = generate_dataset(synth, args.count, out)
    _echo_config(out, "generate", synth=synth, count=args.count)
    print(f"wrote {manifest.count} images + labels.csv + manifest.json to {out}")
    return 0


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    model_cfg = _build_dataclass(ModelConfig, file_cfg.get("model", {}), "model", {})
    train_cfg = _build_dataclass(
        TrainConfig, file_cfg.get("train", {}), "train",
        {"seed": args.seed, "epochs_max": args.epochs, "batch_size": args.batch_size,
         "lr": args.lr, "mode": args.mode})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    data = prepare_training_data(
        args.data, image_size=model_cfg.image_size,
        test_fraction=args.test_fraction, split_seed=args.split_seed,
        stats_scope=args.stats_scope)
    model = ViTModel(model_cfg, seed=train_cfg.seed)
    ckpt_path = out / "best.ckpt"
    report = train(model, data, train_cfg, checkpoint_path=ckpt_path)
    report.to_csv(out / "report.csv")
    _echo_config(out, "train", model=model_cfg, train=train_cfg,
                 data={"dir": str(args.data), "split_seed": args.split_seed,
                       "test_fraction": args.test_fraction,
                       "stats_scope": args.stats_scope})
    last = len(report.epochs) - 1
    print(f"trained {len(report.epochs)} epoch(s), stop reason: {report.stop_reason}, "
          f"best epoch {report.best_epoch}")
    print(f"final train loss {report.train_loss[last]:.6f}, "
          f"test loss {report.test_loss[last]:.6f}, "
          f"r_t0 {report.r_t0[last]:.4f}")
    print(f"checkpoint: {ckpt_path}")
    print(f"report: {out / 'report.csv'}")
    return 0


def _load_split_for_eval(data_dir, model, stats, metadata):
    """Rebuild the exact test split a checkpoint was validated on."""
    labels = load_labels(Path(data_dir) / "labels.csv")
    images = load_images(data_dir, count=labels.shape[0])
    split = split_dataset(labels.shape[0],
                          metadata.get("test_fraction", 0.2),
                          metadata.get("split_seed", 42))
    batch = preprocess_batch(images[split.test_indices], model.config.image_size)
    targets = normalize_labels(labels[split.test_indices, :3], stats)
    return batch, targets


def cmd_eval(args) -> int:
    model, stats, metadata = load_checkpoint(args.checkpoint)
    if stats is None:
        raise DataError(
            "checkpoint carries no normalization statistics; cannot denormalize")
    images, targets = _load_split_for_eval(args.data, model, stats, metadata)
    batch_size = args.batch_size or metadata.get("batch_size", 32)
    report = evaluate(model, images, targets, stats, batch_size=batch_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_metrics_json(out / "metrics.json")
    report.write_errors_csv(out / "errors.csv")
    _echo_config(out, "eval",
                 eval={"checkpoint": str(args.checkpoint), "data": str(args.data),
                       "batch_size": batch_size, "checkpoint_metadata": metadata})
    for name in TARGET_NAMES:
        print(f"pearson r ({name}): {report.pearson[name]:.4f}")
    print(f"inference time: {report.inference_seconds:.3f} s over {report.n_samples} samples")
    if args.report_text:
        text = format_prediction_report(report.predictions[:args.report_text],
                                        report.truths[:args.report_text])
        (out / "predictions.txt").write_text(text)
        print(text, end="")
    print(f"metrics: {out / 'metrics.json'}")
    return 0


def cmd_predict(args) -> int:
    model, stats, metadata = load_checkpoint(args.checkpoint)
    if stats is None:
        if args.stats is None:
            raise DataError(
                "checkpoint carries no normalization statistics; pass --stats "
                "with the stats.json written at training time")
        stats_path = Path(args.stats)
        if not stats_path.exists():
            raise DataError(f"stats file not found: {stats_path}")
        with open(stats_path) as fh:
            stats = NormalizationStats.from_dict(json.load(fh))
    pixels = []
    for path in args.images:
        p = Path(path)
        if not p.exists():
            raise DataError(f"image not found: {p}")
        try:
            with Image.open(p) as im:
                pixels.append(np.asarray(im.convert("L"), dtype=np.uint8))
        except UnidentifiedImageError as exc:
            raise DataError(f"cannot read image {p}: {exc}") from exc
    batch = preprocess_batch(pixels, model.config.image_size)
    preds = model.predict(batch).astype(np.float64) * stats.std + stats.mean
    lines = ["image,t0,f0,f1"]
    for path, row in zip(args.images, preds):
        lines.append(f"{path},{row[0]:.4f},{row[1]:.4f},{row[2]:.4f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {len(preds)} prediction(s) to {args.out}")
    else:
        print(text, end="")
    return 0


# ---- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chirpvit",
        description="Synthetic chirp spectrograms and a transformer that "
                    "regresses their onset time and frequency sweep.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize a labeled spectrogram dataset")
    g.add_argument("--count", type=int, required=True, help="number of images")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=None, help="generation seed")
    g.add_argument("--config", default=None,
                   help=f"JSON config file (default: ${CONFIG_ENV_VAR})")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train the regression model on a dataset")
    t.add_argument("--data", required=True, help="generated dataset directory")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--config", default=None,
                   help=f"JSON config file (default: ${CONFIG_ENV_VAR})")
    t.add_argument("--seed", type=int, default=None, help="training seed")
    t.add_argument("--epochs", type=int, default=None, help="max epochs")
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--mode", choices=("full", "lora_finetune"), default=None)
    t.add_argument("--split-seed", type=int, default=42)
    t.add_argument("--test-fraction", type=float, default=0.2)
    t.add_argument("--stats-scope", choices=("full", "train"), default="full")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on its test split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="the dataset the model was trained on")
    e.add_argument("--out", required=True, help="output directory")
    e.add_argument("--batch-size", type=int, default=None,
                   help="override the batch size recorded in the checkpoint")
    e.add_argument("--report-text", type=int, nargs="?", const=5, default=0,
                   metavar="N", help="also print predicted/real stanzas for N samples")
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict chirp parameters for PNG images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--stats", default=None,
                   help="stats.json fallback when the checkpoint has no statistics")
    p.add_argument("--out", default=None, help="CSV output path (default: stdout)")
    p.add_argument("images", nargs="+", help="PNG image paths")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ChirpVitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
