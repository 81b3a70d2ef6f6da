"""Training loop: MSE objective, AdamW, plateau LR scheduling, early stopping.

The loss is the batch mean of per-sample squared L2 norms over the three
targets; note the squared norm is not additionally divided by 3, so values
are 3x what a mean-over-elements convention would give.

Each epoch reshuffles the training set with a generator seeded once from
the config, so a (seed, config, data) triple fixes the whole run bit-exactly
in a given precision mode.  Validation uses the test split, as the upstream
experiment did; that is leaky but faithful, and the split can be tightened
upstream by the caller.  The checkpoint on disk always holds the weights of
the best test-loss epoch, not the last one.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, get_default_dtype
from .data import TrainData, denormalize_predictions
from .errors import ConfigurationError, MetricError, NumericError, ShapeError, TrainingError
from .evaluate import pearson_r
from .model import TRAIN_MODES, ViTModel, save_checkpoint, trainable_parameters

IMPROVE_TOL = 1e-8  # below this, a val-loss drop counts as float noise


@dataclass(frozen=True)
class TrainConfig:
    epochs_max: int = 15
    batch_size: int = 32
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    scheduler_factor: float = 0.5
    scheduler_patience: int = 2
    early_stop_patience: int = 3
    seed: int = 0
    mode: str = "full"
    include_pooler: bool = False

    def validate(self) -> None:
        if self.epochs_max < 1:
            raise ConfigurationError(f"epochs_max must be >= 1, got {self.epochs_max}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        if not 0.0 < self.scheduler_factor < 1.0:
            raise ConfigurationError(
                f"scheduler_factor must be in (0, 1), got {self.scheduler_factor}")
        if self.scheduler_patience < 1 or self.early_stop_patience < 1:
            raise ConfigurationError("patience values must be >= 1")
        if self.weight_decay < 0:
            raise ConfigurationError(
                f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.mode not in TRAIN_MODES:
            raise ConfigurationError(f"mode must be one of {TRAIN_MODES}, got {self.mode!r}")


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean over the batch of squared L2 residual norms (no division by 3)."""
    if not isinstance(target, Tensor):
        target = Tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    return (diff * diff).sum() * (1.0 / pred.shape[0])


@dataclass
class AdamState:
    """First/second moment estimates and step counter for one parameter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def fresh(cls, param: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), step=0)


def adamw_step(param: np.ndarray, grad: np.ndarray, state: AdamState,
               config: TrainConfig, lr: float) -> np.ndarray:
    """One decoupled-weight-decay Adam update; mutates ``state``, returns new param.

    theta <- theta - lr*wd*theta - lr * m_hat / (sqrt(v_hat) + eps)
    with the usual bias-corrected moment estimates.
    """
    if not np.isfinite(grad).all():
        raise NumericError("non-finite gradient passed to adamw_step")
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = state.m / (1.0 - b1 ** state.step)
    v_hat = state.v / (1.0 - b2 ** state.step)
    return param - lr * config.weight_decay * param - lr * m_hat / (np.sqrt(v_hat) + config.eps)


@dataclass
class PlateauState:
    best: float = float("inf")
    bad_epochs: int = 0


def lr_schedule_step(current_lr: float, val_loss: float, state: PlateauState,
                     factor: float, patience: int) -> float:
    """Reduce-on-plateau with the counter reset on improvement and on cut."""
    if val_loss < state.best - IMPROVE_TOL:
        state.best = val_loss
        state.bad_epochs = 0
        return current_lr
    state.bad_epochs += 1
    if state.bad_epochs >= patience:
        state.bad_epochs = 0
        return current_lr * factor
    return current_lr


def early_stop_check(val_losses, patience: int) -> bool:
    """True when the last ``patience`` epochs all failed to beat the prior best."""
    if len(val_losses) <= patience:
        return False
    best_before = min(val_losses[:-patience])
    return all(v >= best_before - IMPROVE_TOL for v in val_losses[-patience:])


@dataclass
class TrainReport:
    """Per-epoch traces plus the stopping outcome; rows align by index."""

    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    r_t0: list = field(default_factory=list)
    r_f0: list = field(default_factory=list)
    r_f1: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = 0

    CSV_COLUMNS = ("epoch", "train_loss", "test_loss", "r_t0", "r_f0", "r_f1",
                   "lr", "epoch_seconds")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.CSV_COLUMNS)
            for i in range(len(self.epochs)):
                writer.writerow([self.epochs[i], repr(self.train_loss[i]),
                                 repr(self.test_loss[i]), repr(self.r_t0[i]),
                                 repr(self.r_f0[i]), repr(self.r_f1[i]),
                                 repr(self.lr[i]), repr(self.epoch_seconds[i])])


def _safe_pearson(pred: np.ndarray, true: np.ndarray) -> float:
    # a collapsed model can emit constant predictions mid-training; record
    # that as nan instead of aborting the run
    try:
        return pearson_r(pred, true)
    except MetricError:
        return float("nan")


def _test_metrics(model: ViTModel, images: np.ndarray, targets: np.ndarray,
                  stats, batch_size: int):
    preds = []
    for s in range(0, images.shape[0], batch_size):
        preds.append(model.predict(images[s:s + batch_size]))
    preds = np.concatenate(preds).astype(np.float64)
    loss = float(np.sum((preds - targets) ** 2) / targets.shape[0])
    pred_phys = denormalize_predictions(preds, stats)
    true_phys = denormalize_predictions(targets, stats)
    rs = tuple(_safe_pearson(pred_phys[:, j], true_phys[:, j]) for j in range(3))
    return loss, rs


def train(model: ViTModel, data: TrainData, config: TrainConfig,
          checkpoint_path=None) -> TrainReport:
    """Optimize ``model`` in place and return the per-epoch report.

    When ``checkpoint_path`` is given, the weights of the best test-loss
    epoch are saved there together with the normalization statistics and
    enough metadata to rebuild the exact data split.
    """
    config.validate()
    dt = get_default_dtype()
    train_x = data.train_images.astype(dt)
    train_y = data.train_targets.astype(dt)
    test_x = data.test_images.astype(dt)
    test_y = data.test_targets.astype(np.float64)

    trainable = trainable_parameters(model, config.mode, config.include_pooler)
    opt_state = {name: AdamState.fresh(t.data) for name, t in trainable.items()}
    shuffle_rng = np.random.default_rng(config.seed)
    lr = config.lr
    plateau = PlateauState()
    report = TrainReport()
    best_loss = float("inf")
    n_train = train_x.shape[0]

    def save_best(epoch):
        if checkpoint_path is None:
            return
        metadata = {
            "mode": config.mode,
            "include_pooler": config.include_pooler,
            "train_seed": config.seed,
            "batch_size": config.batch_size,
            "best_epoch": epoch,
            "split_seed": data.split.seed,
            "test_fraction": data.split.test_fraction,
            "stats_scope": data.stats.scope,
            "trainable": sorted(trainable),
            "frozen": sorted(set(model.params) - set(trainable)),
        }
        save_checkpoint(checkpoint_path, model, stats=data.stats, metadata=metadata)

    for epoch in range(1, config.epochs_max + 1):
        tic = time.perf_counter()
        perm = shuffle_rng.permutation(n_train)
        total_sq = 0.0
        for batch_no, s in enumerate(range(0, n_train, config.batch_size)):
            idx = perm[s:s + config.batch_size]
            try:
                pred = model.forward(train_x[idx])
                loss = mse_loss(pred, Tensor(train_y[idx]))
                model.zero_grad()
                loss.backward()
                for name, t in trainable.items():
                    if t.grad is None:
                        continue  # e.g. the pooler when nothing routes to it
                    t.data = adamw_step(t.data, t.grad, opt_state[name], config, lr)
            except NumericError as exc:
                raise TrainingError(f"aborting on numeric failure: {exc}",
                                    epoch=epoch, batch=batch_no, lr=lr) from exc
            total_sq += float(loss.data) * len(idx)
        epoch_train_loss = total_sq / n_train

        test_loss, (rt0, rf0, rf1) = _test_metrics(
            model, test_x, test_y, data.stats, config.batch_size)

        report.epochs.append(epoch)
        report.train_loss.append(epoch_train_loss)
        report.test_loss.append(test_loss)
        report.r_t0.append(rt0)
        report.r_f0.append(rf0)
        report.r_f1.append(rf1)
        report.lr.append(lr)

        if test_loss < best_loss - IMPROVE_TOL:
            best_loss = test_loss
            report.best_epoch = epoch
            save_best(epoch)

        lr = lr_schedule_step(lr, test_loss, plateau,
                              config.scheduler_factor, config.scheduler_patience)
        report.epoch_seconds.append(time.perf_counter() - tic)

        if early_stop_check(report.test_loss, config.early_stop_patience):
            report.stop_reason = "early_stop"
            break
    else:
        report.stop_reason = "max_epochs"
    return report
