"""Label normalization, train/test splitting, and image preprocessing.

The regression targets are the first three label columns (t0, f0, f1).
Normalization is z-scoring with population statistics (divisor N); by
default the statistics are computed over the full label set before
splitting, which mirrors the upstream experiment this package reproduces.
Pass ``stats_scope="train"`` to restrict them to the training rows.

Images travel as float arrays shaped (3, H, W) in [0, 1]: grayscale pixels
are divided by 255, resized bilinearly, and replicated across three
channels so the patch embedding sees an RGB-shaped input.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import kernels
from .errors import DataError, NormalizationError
from .synth import CHIRP_TYPES, LABELS_HEADER

TARGET_COLUMNS = ("t0", "f0", "f1")
STATS_SCOPES = ("full", "train")


@dataclass(frozen=True)
class NormalizationStats:
    """Per-target mean and population standard deviation."""

    mean: np.ndarray
    std: np.ndarray
    scope: str = "full"

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        if self.mean.shape != (len(TARGET_COLUMNS),) or self.std.shape != self.mean.shape:
            raise NormalizationError(
                f"stats must have shape ({len(TARGET_COLUMNS)},), got "
                f"{self.mean.shape} / {self.std.shape}")
        if np.any(self.std <= 0):
            raise NormalizationError(f"standard deviations must be > 0, got {self.std}")

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "scope": self.scope, "columns": list(TARGET_COLUMNS)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(mean=np.asarray(d["mean"]), std=np.asarray(d["std"]),
                   scope=d.get("scope", "full"))


def compute_stats(targets: np.ndarray, scope: str = "full") -> NormalizationStats:
    """Mean and population std per column of an (N, 3) target array."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim != 2 or targets.shape[1] != len(TARGET_COLUMNS):
        raise NormalizationError(f"expected (N, 3) targets, got {targets.shape}")
    if targets.shape[0] < 2:
        raise NormalizationError("need at least 2 rows to compute statistics")
    std = targets.std(axis=0)  # population form, ddof=0
    if np.any(std == 0):
        bad = [TARGET_COLUMNS[i] for i in np.nonzero(std == 0)[0]]
        raise NormalizationError(f"constant target column(s): {', '.join(bad)}")
    return NormalizationStats(mean=targets.mean(axis=0), std=std, scope=scope)


def normalize_labels(targets: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.float64)
    return (targets - stats.mean) / stats.std


def denormalize_predictions(normed: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    normed = np.asarray(normed, dtype=np.float64)
    return normed * stats.std + stats.mean


@dataclass(frozen=True)
class DatasetSplit:
    """Index partition of a dataset; test indices come first in the shuffle."""

    train_indices: np.ndarray
    test_indices: np.ndarray
    seed: int
    test_fraction: float


def split_dataset(n: int, test_fraction: float = 0.2, seed: int = 42) -> DatasetSplit:
    """Shuffle indices with a seeded generator and carve off the test block.

    The test set is the first ``round(test_fraction * n)`` entries of the
    permutation (round half to even), the training set is the remainder.
    Both halves must be non-empty.
    """
    if n < 2:
        raise DataError(f"need at least 2 samples to split, got {n}")
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n_test = int(np.rint(test_fraction * n))
    if n_test < 1 or n_test >= n:
        raise DataError(
            f"test_fraction {test_fraction} leaves an empty split for n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return DatasetSplit(train_indices=perm[n_test:], test_indices=perm[:n_test],
                        seed=seed, test_fraction=test_fraction)


def preprocess_image(pixels: np.ndarray, image_size: int = 224) -> np.ndarray:
    """uint8 (H, W) grayscale -> float (3, image_size, image_size) in [0, 1]."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise DataError(f"expected a 2-D grayscale image, got shape {pixels.shape}")
    arr = pixels.astype(np.float64) / 255.0
    arr = kernels.resize_bilinear(arr, image_size, image_size)
    return np.broadcast_to(arr, (3,) + arr.shape).copy()


def preprocess_batch(images: list[np.ndarray] | np.ndarray,
                     image_size: int = 224) -> np.ndarray:
    """Stack of preprocessed images, shape (N, 3, image_size, image_size)."""
    return np.stack([preprocess_image(img, image_size) for img in images])


def load_labels(labels_path) -> np.ndarray:
    """Parse labels.csv into an (N, 4) float array of t0, f0, f1, dt.

    The chirp type column is validated but not returned; it is not a
    regression target.
    """
    labels_path = Path(labels_path)
    if not labels_path.exists():
        raise DataError(f"labels file not found: {labels_path}")
    rows = []
    with open(labels_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != LABELS_HEADER:
            raise DataError(
                f"unexpected labels header {header}, expected {list(LABELS_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise DataError(f"{labels_path}:{lineno}: expected 5 fields, got {len(row)}")
            try:
                values = [float(v) for v in row[:4]]
            except ValueError as exc:
                raise DataError(f"{labels_path}:{lineno}: {exc}") from exc
            if row[4] not in CHIRP_TYPES:
                raise DataError(f"{labels_path}:{lineno}: bad chirp_type {row[4]!r}")
            rows.append(values)
    if not rows:
        raise DataError(f"{labels_path} holds no data rows")
    return np.asarray(rows, dtype=np.float64)


_IMAGE_RE = re.compile(r"spectrogram_(\d+)\.png$")


def load_images(data_dir, count: int | None = None) -> np.ndarray:
    """Read spectrogram_{i}.png files in index order into a uint8 (N, H, W) stack."""
    data_dir = Path(data_dir)
    found = {}
    for p in data_dir.glob("spectrogram_*.png"):
        m = _IMAGE_RE.match(p.name)
        if m:
            found[int(m.group(1))] = p
    if not found:
        raise DataError(f"no spectrogram_*.png files in {data_dir}")
    n = count if count is not None else max(found) + 1
    images = []
    for i in range(n):
        if i not in found:
            raise DataError(f"missing image spectrogram_{i}.png in {data_dir}")
        with Image.open(found[i]) as im:
            images.append(np.asarray(im.convert("L"), dtype=np.uint8))
    shapes = {img.shape for img in images}
    if len(shapes) > 1:
        raise DataError(f"inconsistent image shapes: {sorted(shapes)}")
    return np.stack(images)


@dataclass
class TrainData:
    """Preprocessed tensors plus the bookkeeping needed to reproduce them."""

    train_images: np.ndarray
    train_targets: np.ndarray
    test_images: np.ndarray
    test_targets: np.ndarray
    stats: NormalizationStats
    split: DatasetSplit


def prepare_training_data(data_dir, image_size: int = 224,
                          test_fraction: float = 0.2, split_seed: int = 42,
                          stats_scope: str = "full") -> TrainData:
    """Load a generated dataset directory and produce normalized train/test tensors.

    Writes a ``stats.json`` sidecar next to the labels so later evaluation
    can undo the normalization without re-deriving it.
    """
    if stats_scope not in STATS_SCOPES:
        raise DataError(f"stats_scope must be one of {STATS_SCOPES}, got {stats_scope!r}")
    data_dir = Path(data_dir)
    labels = load_labels(data_dir / "labels.csv")
    images = load_images(data_dir, count=labels.shape[0])
    if images.shape[0] != labels.shape[0]:
        raise DataError(
            f"image/label count mismatch: {images.shape[0]} vs {labels.shape[0]}")
    split = split_dataset(labels.shape[0], test_fraction, split_seed)
    targets = labels[:, :3]
    if stats_scope == "train":
        stats = compute_stats(targets[split.train_indices], scope="train")
    else:
        stats = compute_stats(targets, scope="full")
    normed = normalize_labels(targets, stats)
    batch = preprocess_batch(images, image_size)
    with open(data_dir / "stats.json", "w") as fh:
        json.dump(stats.to_dict(), fh, indent=2)
    return TrainData(
        train_images=batch[split.train_indices],
        train_targets=normed[split.train_indices],
        test_images=batch[split.test_indices],
        test_targets=normed[split.test_indices],
        stats=stats, split=split)
