"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""
from __future__ import annotations

import numbers

import numpy as np
import torch

from .exceptions import ConfigurationError, InputError, UndefinedMetricError


def check_feature_map(x, name="input", channels=None):
    """Validate a rank-4 ``(B, C, H, W)`` tensor and return it unchanged."""
    if not isinstance(x, torch.Tensor):
        raise InputError(f"{name} must be a torch.Tensor, got {type(x).__name__}")
    if x.dim() != 4:
        raise InputError(f"{name} must have shape (B, C, H, W), got {tuple(x.shape)}")
    b, c, h, w = x.shape
    if b < 1 or c < 1:
        raise InputError(f"{name} has an empty batch or channel axis: {tuple(x.shape)}")
    if h < 1 or w < 1:
        raise InputError(f"{name} has empty spatial extent: {tuple(x.shape)}")
    if channels is not None and c != channels:
        raise ConfigurationError(f"{name} has {c} channels, parameters expect {channels}")
    return x


def check_image_batch(x, name="batch"):
    x = check_feature_map(x, name)
    if x.shape[1] != 3:
        raise InputError(f"{name} must have 3 colour channels, got {x.shape[1]}")
    return x


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ConfigurationError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_fraction(value, name, low=0.0, high=1.0, closed=False):
    ok = low <= value <= high if closed else low < value < high
    if not ok:
        raise ConfigurationError(f"{name} must lie in {'[' if closed else '('}{low}, {high}"
                                 f"{']' if closed else ')'}, got {value!r}")
    return float(value)


def check_prediction_set(y_true, y_pred, min_samples=1):
    """Coerce a pair of actual/predicted vectors to float64 arrays.

    Raises ``UndefinedMetricError`` for fewer than ``min_samples`` pairs and
    ``InputError`` for mismatched lengths or non-finite values.
    """
    y_true = np.asarray(y_true, dtype=np.float64).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=np.float64).reshape(-1)
    if y_true.shape != y_pred.shape:
        raise InputError(f"length mismatch: {y_true.size} actual vs {y_pred.size} predicted")
    if y_true.size < min_samples:
        raise UndefinedMetricError(f"need at least {min_samples} samples, got {y_true.size}")
    if not (np.all(np.isfinite(y_true)) and np.all(np.isfinite(y_pred))):
        raise InputError("prediction set contains non-finite values")
    return y_true, y_pred
