"""Evaluation: Pearson correlations, error distributions, timing, reports.

Correlations are computed on denormalized (physical-unit) values.  Pearson r
is invariant under positive affine maps, so this equals the normalized-scale
value; physical units just make the error samples and reports readable.
Covariance and the standard deviations use the population divisor N, the
same convention as the label statistics.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import NormalizationStats, denormalize_predictions, preprocess_batch
from .errors import DataError, MetricError

TARGET_NAMES = ("t0", "f0", "f1")


def pearson_r(pred: np.ndarray, true: np.ndarray) -> float:
    """cov(pred, true) / (sigma_pred * sigma_true), population divisor."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    true = np.asarray(true, dtype=np.float64).ravel()
    if pred.shape != true.shape:
        raise MetricError(f"length mismatch: {pred.shape} vs {true.shape}")
    if pred.size < 2:
        raise MetricError(f"need at least 2 points, got {pred.size}")
    dp = pred - pred.mean()
    dt = true - true.mean()
    sp = np.sqrt(np.mean(dp * dp))
    st = np.sqrt(np.mean(dt * dt))
    if sp == 0.0:
        raise MetricError("predicted values are constant; correlation undefined")
    if st == 0.0:
        raise MetricError("true values are constant; correlation undefined")
    return float(np.mean(dp * dt) / (sp * st))


def error_histogram(errors: np.ndarray, n_bins: int) -> tuple[np.ndarray, np.ndarray]:
    """(edges, counts) with linear edges over [min, max]; counts sum to N.

    Downstream plotting puts the counts on a log scale; nothing here needs to.
    """
    errors = np.asarray(errors, dtype=np.float64).ravel()
    if errors.size == 0:
        raise MetricError("cannot histogram an empty error vector")
    if n_bins < 2:
        raise MetricError(f"n_bins must be >= 2, got {n_bins}")
    counts, edges = np.histogram(errors, bins=n_bins)
    return edges, counts


def sample_skewness(values: np.ndarray) -> float:
    """Population skewness m3 / m2^(3/2); zero for symmetric distributions."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size < 2:
        raise MetricError(f"need at least 2 points, got {values.size}")
    d = values - values.mean()
    m2 = np.mean(d * d)
    if m2 == 0.0:
        raise MetricError("constant values have no defined skewness")
    return float(np.mean(d ** 3) / m2 ** 1.5)


@dataclass
class EvalReport:
    pearson: dict                 # target name -> r
    errors: np.ndarray            # (N, 3) pred - true, physical units
    predictions: np.ndarray       # (N, 3) denormalized
    truths: np.ndarray            # (N, 3) denormalized
    inference_seconds: float
    n_samples: int

    def histogram(self, target: str, n_bins: int = 50):
        j = TARGET_NAMES.index(target)
        return error_histogram(self.errors[:, j], n_bins)

    def metrics_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "inference_seconds": self.inference_seconds,
            "pearson": dict(self.pearson),
            "mean_abs_error": {
                name: float(np.abs(self.errors[:, j]).mean())
                for j, name in enumerate(TARGET_NAMES)},
            "error_skewness": {
                name: self._skew_or_nan(self.errors[:, j])
                for j, name in enumerate(TARGET_NAMES)},
        }

    @staticmethod
    def _skew_or_nan(errors: np.ndarray) -> float:
        # degenerate (constant) error columns happen with oracle-grade models
        try:
            return sample_skewness(errors)
        except MetricError:
            return float("nan")

    def write_metrics_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.metrics_dict(), fh, indent=2)

    def write_errors_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("sample_id", "target", "pred", "true", "error"))
            for i in range(self.n_samples):
                for j, name in enumerate(TARGET_NAMES):
                    writer.writerow([i, name, repr(self.predictions[i, j]),
                                     repr(self.truths[i, j]),
                                     repr(self.errors[i, j])])


def evaluate(model, images: np.ndarray, targets_normed: np.ndarray,
             stats: NormalizationStats, batch_size: int = 32,
             preprocessed: bool = True, image_size: int = 224) -> EvalReport:
    """Run the model over a split and gather metrics.

    ``model`` only needs a ``predict(batch) -> (B, 3) array`` method.  The
    wall-clock interval covers the whole pass, preprocessing included when
    ``preprocessed`` is false.
    """
    if len(images) == 0:
        raise DataError("cannot evaluate an empty split")
    if len(images) != len(targets_normed):
        raise DataError(
            f"image/target count mismatch: {len(images)} vs {len(targets_normed)}")
    tic = time.perf_counter()
    if not preprocessed:
        images = preprocess_batch(images, image_size)
    preds = []
    for s in range(0, len(images), batch_size):
        preds.append(model.predict(images[s:s + batch_size]))
    preds = np.concatenate(preds).astype(np.float64)
    inference_seconds = time.perf_counter() - tic

    pred_phys = denormalize_predictions(preds, stats)
    true_phys = denormalize_predictions(np.asarray(targets_normed, dtype=np.float64), stats)
    pearson = {name: pearson_r(pred_phys[:, j], true_phys[:, j])
               for j, name in enumerate(TARGET_NAMES)}
    return EvalReport(pearson=pearson, errors=pred_phys - true_phys,
                      predictions=pred_phys, truths=true_phys,
                      inference_seconds=inference_seconds,
                      n_samples=len(images))


_REPORT_LINE = ("A chirp pattern was observed starting at time {0:.2f} with a "
                "start frequency of {1:.2f} Hz and an end frequency of {2:.2f} Hz.")


def format_prediction_report(pred_rows, true_rows=None) -> str:
    """Human-readable predicted/real stanzas, one per sample.

    Layout: a header, then per sample the predicted sentence, the matching
    ground-truth sentence when available, and a dashed separator.
    """
    pred_rows = np.asarray(pred_rows, dtype=np.float64)
    if pred_rows.ndim != 2 or pred_rows.shape[1] != 3:
        raise DataError(f"expected (N, 3) prediction rows, got {pred_rows.shape}")
    if true_rows is not None:
        true_rows = np.asarray(true_rows, dtype=np.float64)
        if true_rows.shape != pred_rows.shape:
            raise DataError(
                f"prediction/truth shape mismatch: {pred_rows.shape} vs {true_rows.shape}")
    lines = ["Predictions and Real Labels:"]
    for i in range(pred_rows.shape[0]):
        lines.append(f"Sample {i + 1}:")
        lines.append("  Predicted: " + _REPORT_LINE.format(*pred_rows[i]))
        if true_rows is not None:
            lines.append("  Real: " + _REPORT_LINE.format(*true_rows[i]))
        lines.append("-----")
    return "\n".join(lines) + "\n"
