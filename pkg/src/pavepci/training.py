"""Training loop with per-epoch validation, plateau LR scheduling and early stopping."""
from __future__ import annotations

import copy
import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from torch import nn

from . import metrics
from .backbones import predict
from .checkpoint import Checkpoint, save_checkpoint
from .exceptions import ConfigurationError, TrainingDivergedError
from .validation import check_fraction, check_positive_int

log = logging.getLogger(__name__)

LOSSES = ("mse", "l1", "huber")
MONITORS = ("val_mae", "val_rmse", "val_loss")


@dataclass
class TrainConfig:
    max_epochs: int = 100
    initial_lr: float = 1e-4
    loss: str = "mse"
    batch_size: int = 32
    plateau_factor: float = 0.1
    plateau_patience: int = 3
    plateau_threshold: float = 1e-4
    min_lr: float = 1e-7
    early_stop_patience: int = 10
    monitor_metric: str = "val_mae"
    seed: int = 0
    weight_decay: float = 0.0
    grad_clip: float | None = None
    mape_min_denominator: float = 1.0
    freeze_batchnorm: bool = False

    def validate(self):
        check_positive_int(self.max_epochs, "max_epochs")
        check_positive_int(self.batch_size, "batch_size")
        check_positive_int(self.plateau_patience, "plateau_patience")
        check_positive_int(self.early_stop_patience, "early_stop_patience")
        check_fraction(self.plateau_factor, "plateau_factor")
        if not self.initial_lr > 0:
            raise ConfigurationError(f"initial_lr must be positive, got {self.initial_lr}")
        if not self.min_lr > 0:
            raise ConfigurationError(f"min_lr must be positive, got {self.min_lr}")
        if self.loss not in LOSSES:
            raise ConfigurationError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.monitor_metric not in MONITORS:
            raise ConfigurationError(f"monitor_metric must be one of {MONITORS}, got {self.monitor_metric!r}")
        return self


def make_loss(name):
    if name == "mse":
        return nn.MSELoss()
    if name == "l1":
        return nn.L1Loss()
    if name == "huber":
        return nn.HuberLoss()
    raise ConfigurationError(f"unknown loss {name!r}")


@dataclass
class PlateauState:
    lr: float
    factor: float = 0.1
    patience: int = 3
    min_lr: float = 1e-7
    threshold: float = 1e-4
    best: float = math.inf
    num_bad: int = 0

    def to_dict(self):
        d = asdict(self)
        d["best"] = None if math.isinf(self.best) else self.best
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["best"] = math.inf if d.get("best") is None else d["best"]
        return cls(**d)


def scheduler_update(state, monitored_value):
    """Reduce-on-plateau step; mutates ``state`` and returns the new learning rate.

    A value counts as an improvement when it beats the best so far by a
    relative margin of ``threshold``.  After ``patience`` epochs without
    improvement the rate is multiplied by ``factor`` (floored at ``min_lr``)
    and the counter restarts.
    """
    if not math.isfinite(monitored_value):
        raise ValueError(f"monitored value must be finite, got {monitored_value}")
    if monitored_value < state.best * (1.0 - state.threshold) or math.isinf(state.best):
        state.best = monitored_value
        state.num_bad = 0
    else:
        state.num_bad += 1
    if state.num_bad >= state.patience:
        state.lr = max(state.lr * state.factor, state.min_lr)
        state.num_bad = 0
    return state.lr


@dataclass
class EarlyStopping:
    patience: int = 10
    best: float = math.inf
    best_epoch: int | None = None
    bad_epochs: int = 0

    def update(self, value, epoch):
        """Record one epoch; returns True when it is a new best."""
        if value < self.best:
            self.best, self.best_epoch, self.bad_epochs = value, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self):
        return self.bad_epochs >= self.patience

    def to_dict(self):
        d = asdict(self)
        d["best"] = None if math.isinf(self.best) else self.best
        return d


LOG_COLUMNS = ("epoch", "train_loss", "val_mae", "val_mape", "val_rmse", "lr", "seconds")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mae: float
    val_mape: float
    val_rmse: float
    lr: float
    seconds: float
    val_loss: float = math.nan


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False

    def monitor_values(self, monitor):
        return [getattr(r, monitor) for r in self.rows]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_COLUMNS)
            for r in self.rows:
                w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in LOG_COLUMNS[1:]])
        return Path(path)

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [
                EpochRecord(int(d["epoch"]), *(float(d[c]) for c in LOG_COLUMNS[1:]))
                for d in csv.DictReader(fh)
            ]
        return cls(rows)

    def without_timing(self):
        """Rows as tuples with wall-time dropped, for reproducibility comparisons."""
        return [(r.epoch, r.train_loss, r.val_mae, r.val_mape, r.val_rmse, r.lr) for r in self.rows]


def _set_lr(optimizer, lr):
    for g in optimizer.param_groups:
        g["lr"] = lr


def step(model, batch, loss_fn, optimizer, grad_clip=None, freeze_batchnorm=False):
    """One gradient update on ``(x, y)``; returns the pre-update loss.

    With ``freeze_batchnorm`` the normalisation layers use their running
    statistics, so tiny or near-duplicate batches train the same function
    that inference evaluates.

    Raises ``TrainingDivergedError`` when the loss or any gradient is non-finite.
    """
    x, y = batch
    model.train()
    if freeze_batchnorm:
        for m in model.modules():
            if isinstance(m, nn.modules.batchnorm._BatchNorm):
                m.eval()
    optimizer.zero_grad(set_to_none=True)
    pred = model(x)
    loss = loss_fn(pred, y.to(pred.dtype))
    if not torch.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss {loss.item()}")
    loss.backward()
    for name, p in model.named_parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise TrainingDivergedError(f"non-finite gradient in {name}")
    if grad_clip is not None:
        nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return float(loss.detach())


def evaluate_model(model, image_set, batch_size=32, loss_fn=None, min_denominator=1.0):
    """Clamped predictions over ``image_set``; returns (actual, predicted, mean unclamped loss)."""
    ys, ps, loss_sum = [], [], 0.0
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for x, y in image_set.batches(batch_size):
            raw = model(x)
            if loss_fn is not None:
                loss_sum += float(loss_fn(raw, y)) * len(y)
            lo, hi = model.spec.head.inference_clamp
            ys.append(y)
            ps.append(raw.clamp(lo, hi))
    model.train(was_training)
    y = torch.cat(ys).double().numpy()
    p = torch.cat(ps).double().numpy()
    return y, p, loss_sum / len(y)


def make_optimizer(model, cfg):
    return torch.optim.Adam(model.parameters(), lr=cfg.initial_lr, weight_decay=cfg.weight_decay)


def train(model, train_data, val_data, cfg=None, checkpoint_path=None, log_path=None, callback=None):
    """Fit ``model`` on ``train_data`` (an ``ImageSet``), validating on ``val_data`` each epoch.

    Returns ``(best_checkpoint, log)``.  On return ``model`` holds the weights
    of the best epoch, not the last one.  ``callback(epoch_record)`` is called
    after every epoch.
    """
    cfg = (cfg or TrainConfig()).validate()
    torch.manual_seed(cfg.seed)
    loss_fn = make_loss(cfg.loss)
    optimizer = make_optimizer(model, cfg)
    plateau = PlateauState(cfg.initial_lr, cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr,
                           cfg.plateau_threshold)
    stopper = EarlyStopping(cfg.early_stop_patience)
    history = TrainingLog()
    best = None

    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        lr = plateau.lr
        total, count = 0.0, 0
        for b, batch in enumerate(train_data.batches(cfg.batch_size, shuffle=True, seed=cfg.seed, epoch=epoch)):
            try:
                loss = step(model, batch, loss_fn, optimizer, cfg.grad_clip, cfg.freeze_batchnorm)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(f"{exc} (epoch {epoch}, batch {b}, lr {lr:g})",
                                            epoch=epoch, batch_index=b, lr=lr) from exc
            total += loss * len(batch[1])
            count += len(batch[1])

        y, p, val_loss = evaluate_model(model, val_data, cfg.batch_size, loss_fn)
        report = metrics.evaluate(y, p, cfg.mape_min_denominator)
        record = EpochRecord(epoch, total / count, report.mae, report.mape, report.rmse, lr,
                             time.perf_counter() - t0, val_loss)
        history.rows.append(record)
        monitored = {"val_mae": report.mae, "val_rmse": report.rmse, "val_loss": val_loss}[cfg.monitor_metric]
        log.info("epoch %d train_loss=%.4f val_mae=%.4f val_rmse=%.4f lr=%.2e",
                 epoch, record.train_loss, report.mae, report.rmse, lr)

        if stopper.update(monitored, epoch):
            best = Checkpoint(model.spec, copy.deepcopy(model.state_dict()),
                              copy.deepcopy(optimizer.state_dict()))
        _set_lr(optimizer, scheduler_update(plateau, monitored))
        if callback is not None:
            callback(record)
        if stopper.should_stop:
            history.stopped_early = True
            break

    history.best_epoch = stopper.best_epoch
    best.state = {
        "epoch": stopper.best_epoch,
        "best_metric": stopper.best,
        "monitor": cfg.monitor_metric,
        "scheduler": plateau.to_dict(),
        "early_stopping": stopper.to_dict(),
        "train_config": asdict(cfg),
    }
    model.load_state_dict(best.model_state)
    if checkpoint_path is not None:
        optimizer.load_state_dict(best.optimizer_state)
        save_checkpoint(checkpoint_path, model, optimizer, best.state)
    if log_path is not None:
        history.to_csv(log_path)
    return best, history


def train_mae(model, image_set, batch_size=32):
    y, p, _ = evaluate_model(model, image_set, batch_size)
    return metrics.mae(y, p)


__all__ = [
    "EarlyStopping", "EpochRecord", "PlateauState", "TrainConfig", "TrainingLog",
    "evaluate_model", "make_loss", "predict", "scheduler_update", "step", "train", "train_mae",
]
