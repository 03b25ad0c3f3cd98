"""Regression metrics over (actual, predicted) PCI vectors."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import UndefinedMetricError
from .validation import check_prediction_set


def mae(y_true, y_pred):
    """Mean absolute error."""
    y, p = check_prediction_set(y_true, y_pred)
    return float(np.mean(np.abs(y - p)))


def mape(y_true, y_pred, min_denominator=1.0):
    """Mean absolute percentage error, in percent.

    Samples whose actual value is below ``min_denominator`` are excluded
    (PCI can be exactly 0).  Returns ``(value, excluded_count)``.
    """
    y, p = check_prediction_set(y_true, y_pred)
    keep = y >= min_denominator
    if not keep.any():
        raise UndefinedMetricError(f"MAPE undefined: every actual value is below {min_denominator}")
    value = 100.0 * float(np.mean(np.abs(y[keep] - p[keep]) / y[keep]))
    return value, int(y.size - keep.sum())


def rmse(y_true, y_pred):
    """Root mean squared error."""
    y, p = check_prediction_set(y_true, y_pred)
    return float(np.sqrt(np.mean((y - p) ** 2)))


def r_squared(y_true, y_pred):
    """Coefficient of determination ``1 - SSE/SST`` (not the squared correlation)."""
    y, p = check_prediction_set(y_true, y_pred, min_samples=2)
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        raise UndefinedMetricError("R^2 undefined: actual values have zero variance")
    return 1.0 - float(np.sum((y - p) ** 2)) / sst


@dataclass
class MetricReport:
    rmse: float
    mae: float
    mape: float
    mape_excluded: int
    r2: float | None
    n: int

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d.get(k) for k in ("rmse", "mae", "mape", "mape_excluded", "r2", "n")})


def evaluate(y_true, y_pred, min_denominator=1.0):
    """All metrics at once.  ``r2`` is None when undefined (n < 2 or constant actuals)."""
    y, p = check_prediction_set(y_true, y_pred)
    value, excluded = mape(y, p, min_denominator)
    try:
        r2 = r_squared(y, p)
    except UndefinedMetricError:
        r2 = None
    return MetricReport(rmse=rmse(y, p), mae=mae(y, p), mape=value, mape_excluded=excluded, r2=r2, n=int(y.size))
