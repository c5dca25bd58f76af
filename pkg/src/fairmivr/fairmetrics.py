"""Accuracy and fairness metrics for zone-level demand forecasts.

All functions take ``actual`` and ``predicted`` as ``(periods, zones)``
arrays.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

logger = logging.getLogger(__name__)

MAPE_FLOOR = 0.1
GEI_SCALE = 1e4


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    rmse: float
    mape: float
    me: float
    mvpe: float
    gei: float

    def to_dict(self) -> dict:
        out = asdict(self)
        out["gei_1e-4"] = self.gei * GEI_SCALE
        return out


def _batch(actual, predicted) -> tuple[np.ndarray, np.ndarray]:
    r = np.atleast_2d(np.asarray(actual, dtype=float))
    p = np.atleast_2d(np.asarray(predicted, dtype=float))
    if r.shape != p.shape:
        raise MetricError(f"shape mismatch: {r.shape} vs {p.shape}")
    if r.size == 0:
        raise MetricError("empty batch")
    return r, p


def accuracy_metrics(actual, predicted, literal_mape: bool = False) -> tuple[float, float, float, float]:
    """Return ``(mae, rmse, mape, me)``.

    MAPE divides by ``max(r, 0.1)``. ``literal_mape=True`` uses
    ``min(r, 0.1)`` instead, which caps every denominator at 0.1.
    """
    r, p = _batch(actual, predicted)
    err = r - p
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err**2)))
    denom = np.minimum(r, MAPE_FLOOR) if literal_mape else np.maximum(r, MAPE_FLOOR)
    if literal_mape and np.any(denom <= 0):
        raise MetricError("literal MAPE is undefined for zero demand cells")
    mape = float(np.mean(np.abs(err) / denom))
    me = float(np.mean(err))
    return mae, rmse, mape, me


def percentage_errors(actual, predicted) -> np.ndarray:
    """(r - r_hat) / r, NaN where r == 0."""
    r, p = _batch(actual, predicted)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(r != 0, (r - p) / np.where(r != 0, r, 1.0), np.nan)


def mvpe(actual, predicted) -> float:
    """Mean over periods of the cross-zone sample variance of percentage errors.

    Zero-demand cells are left out of their period; periods with fewer than
    two usable cells are skipped.
    """
    pe = percentage_errors(actual, predicted)
    variances = []
    skipped = 0
    for row in pe:
        vals = row[~np.isnan(row)]
        if vals.size < 2:
            skipped += 1
            continue
        variances.append(np.var(vals, ddof=1))
    if skipped:
        logger.warning("mvpe: skipped %d period(s) with fewer than 2 nonzero-demand zones", skipped)
    if not variances:
        return 0.0
    return float(np.mean(variances))


def gei_shift(pe: np.ndarray) -> float:
    lo = np.nanmin(pe) if np.any(~np.isnan(pe)) else 0.0
    return max(0.0, -float(lo)) + 1e-9


def gei_periods(b: np.ndarray, alpha: float = 2.0) -> np.ndarray:
    """Generalized entropy index of each row of nonnegative ``b``.

    NaN cells are ignored. Raises if a period has zero mean.
    """
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if alpha in (0.0, 1.0):
        raise MetricError("alpha = 0 and alpha = 1 are limiting cases, not supported")
    out = []
    for k, row in enumerate(b):
        vals = row[~np.isnan(row)]
        if vals.size == 0:
            continue
        mean = vals.mean()
        if mean == 0.0:
            raise MetricError(f"degenerate period {k}: mean of shifted errors is zero")
        n = vals.size
        out.append(np.sum((vals / mean) ** alpha - 1.0) / (n * alpha * (alpha - 1.0)))
    return np.asarray(out)


def gei(actual, predicted, alpha: float = 2.0, shift: float | None = None) -> float:
    """Mean per-period GEI of shifted percentage errors.

    By default one global shift ``max(0, -min PE) + 1e-9`` makes every
    shifted error nonnegative.
    """
    pe = percentage_errors(actual, predicted)
    m = gei_shift(pe) if shift is None else float(shift)
    b = pe + m
    if np.nanmin(b) < 0:
        raise MetricError(f"shift {m} leaves negative shifted errors")
    vals = gei_periods(b, alpha)
    return float(vals.mean()) if vals.size else 0.0


def evaluate(actual, predicted, alpha: float = 2.0, literal_mape: bool = False) -> MetricsReport:
    mae, rmse, mape, me = accuracy_metrics(actual, predicted, literal_mape=literal_mape)
    return MetricsReport(mae, rmse, mape, me, mvpe(actual, predicted), gei(actual, predicted, alpha))
