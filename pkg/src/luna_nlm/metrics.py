"""Evaluation metrics over per-point Gaussian predictive distributions.

All metrics are computed in the original target units; callers de-standardize
predictions first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blr import PredictiveDistribution


@dataclass(frozen=True)
class MetricsReport:
    split: str
    avg_ll: float
    rmse: float
    avg_epistemic_sd: float


def _check_lengths(pred: PredictiveDistribution, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != len(pred):
        raise ValueError(f"predictive has {len(pred)} points but y has {y.shape[0]}")
    return y


def avg_ll(pred: PredictiveDistribution, y: np.ndarray) -> float:
    """Mean log density of y under the per-point Gaussians."""
    y = _check_lengths(pred, y)
    return float(np.mean(-0.5 * np.log(2.0 * np.pi * pred.total_var) - (y - pred.mean) ** 2 / (2.0 * pred.total_var)))


def rmse(pred: PredictiveDistribution, y: np.ndarray) -> float:
    """Root mean squared error of the predictive means."""
    y = _check_lengths(pred, y)
    return float(np.sqrt(np.mean((pred.mean - y) ** 2)))


def epistemic_sd(pred: PredictiveDistribution) -> float:
    """Mean epistemic standard deviation (observation noise excluded).

    Tiny negative variances (within -1e-12) are clamped to zero; anything
    more negative is a caller bug.
    """
    ev = np.asarray(pred.epistemic_var, dtype=np.float64)
    if np.any(ev < -1e-12):
        raise ValueError(f"epistemic variance is negative beyond tolerance: min {ev.min()}")
    return float(np.mean(np.sqrt(np.maximum(ev, 0.0))))


def eurc(eu_gap: float, eu_not_gap: float) -> float:
    """Relative change of epistemic uncertainty, gap versus not-gap.

    (EU_gap - EU_not_gap) / EU_gap: positive when the model is less confident
    where there is no data.
    """
    if eu_gap <= 0:
        raise ValueError(f"eurc undefined for eu_gap = {eu_gap}")
    return (eu_gap - eu_not_gap) / eu_gap
