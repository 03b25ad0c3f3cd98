"""scikit-learn compatible wrapper around the image-to-PCI pipeline."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import SampleRecord
from .exceptions import InputError
from .pipeline import fit_records, predict_records


def _check_paths(X):
    paths = [Path(x) for x in (X.tolist() if isinstance(X, np.ndarray) else X)]
    if not paths:
        raise InputError("X must contain at least one image path")
    return paths


def _check_targets(y, n):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size != n:
        raise InputError(f"X has {n} images but y has {y.size} targets")
    if not np.all(np.isfinite(y)) or y.min() < 0 or y.max() > 100:
        raise InputError("PCI targets must be finite and within [0, 100]")
    return y


class PCIRegressor(RegressorMixin, BaseEstimator):
    """Predict PCI (0-100) from pavement images.

    ``X`` is a sequence of image file paths, ``y`` the matching PCI labels.
    ``fit`` holds out ``1 - train_fraction`` of the images for validation,
    early stopping and learning-rate scheduling.

    Attributes set by ``fit``: ``model_``, ``training_log_``, ``checkpoint_``.
    """

    def __init__(self, family="resnet50_cbam", reduction_ratio=16, pretrained_backbone=True, image_size=224,
                 augment=True, train_fraction=0.9, batch_size=32, max_epochs=100, initial_lr=1e-4,
                 loss="mse", plateau_factor=0.1, plateau_patience=3, min_lr=1e-7, early_stop_patience=10,
                 monitor_metric="val_mae", weight_decay=0.0, grad_clip=None, seed=0):
        self.family = family
        self.reduction_ratio = reduction_ratio
        self.pretrained_backbone = pretrained_backbone
        self.image_size = image_size
        self.augment = augment
        self.train_fraction = train_fraction
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.initial_lr = initial_lr
        self.loss = loss
        self.plateau_factor = plateau_factor
        self.plateau_patience = plateau_patience
        self.min_lr = min_lr
        self.early_stop_patience = early_stop_patience
        self.monitor_metric = monitor_metric
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.seed = seed

    def run_config(self):
        return RunConfig(**self.get_params(), output_dir="").validate()

    def fit(self, X, y):
        paths = _check_paths(X)
        y = _check_targets(y, len(paths))
        records = [SampleRecord(p, float(t), str(p), row=i + 1) for i, (p, t) in enumerate(zip(paths, y))]
        result = fit_records(records, self.run_config())
        self.model_ = result.model
        self.checkpoint_ = result.checkpoint
        self.training_log_ = result.log
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        paths = _check_paths(X)
        records = [SampleRecord(p, 0.0, str(p)) for p in paths]
        return predict_records(self.model_, records, self.image_size, self.batch_size)

    def save(self, path):
        check_is_fitted(self, "model_")
        state = dict(self.checkpoint_.state, image_size=self.image_size, estimator_params=self.get_params())
        return save_checkpoint(path, self.model_, state=state)

    @classmethod
    def load(cls, path):
        model, ckpt = load_checkpoint(path)
        params = ckpt.state.get("estimator_params") or {"family": model.spec.family}
        est = cls(**params)
        est.model_, est.checkpoint_, est.training_log_ = model, ckpt, None
        est.n_features_in_ = 1
        return est
