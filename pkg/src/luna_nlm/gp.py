"""Exact Gaussian-process regression reference.

Conditioning is the textbook Cholesky route: with Gram matrix
K = k(X, X) + white I,

    mean(x*) = k(x*, X) K^{-1} y
    epistemic var(x*) = k(x*, x*) - k(x*, X) K^{-1} k(X, x*)

and the total predictive variance adds the white-noise variance. The white
term enters the Gram diagonal only (exact-identity pairs), not cross
covariances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .blr import PredictiveDistribution

KERNELS = ("matern52", "rbf")


@dataclass(frozen=True)
class KernelConfig:
    kind: str = "matern52"
    length_scale: float = 1.0
    amplitude: float = 1.0
    white_noise: float = 0.0

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.length_scale <= 0 or self.amplitude <= 0:
            raise ValueError("length_scale and amplitude must be positive")
        if self.white_noise < 0:
            raise ValueError("white_noise must be nonnegative")


def _k_of_r(cfg: KernelConfig, r: np.ndarray) -> np.ndarray:
    rho = r / cfg.length_scale
    if cfg.kind == "matern52":
        s = np.sqrt(5.0) * rho
        return cfg.amplitude * (1.0 + s + s**2 / 3.0) * np.exp(-s)
    return cfg.amplitude * np.exp(-0.5 * rho**2)


def kernel_eval(cfg: KernelConfig, x1: np.ndarray, x2: np.ndarray) -> float:
    """Covariance between two points (white noise not included)."""
    x1 = np.asarray(x1, dtype=np.float64).ravel()
    x2 = np.asarray(x2, dtype=np.float64).ravel()
    if x1.shape != x2.shape:
        raise ValueError("points must have equal dimension")
    return float(_k_of_r(cfg, np.linalg.norm(x1 - x2)))


def cross_gram(cfg: KernelConfig, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    xa = np.atleast_2d(xa)
    xb = np.atleast_2d(xb)
    d2 = np.maximum(
        np.sum(xa**2, axis=1)[:, None] + np.sum(xb**2, axis=1)[None, :] - 2.0 * xa @ xb.T, 0.0
    )
    return _k_of_r(cfg, np.sqrt(d2))


def gp_fit_predict(
    cfg: KernelConfig,
    train: tuple[np.ndarray, np.ndarray],
    query: np.ndarray,
) -> PredictiveDistribution:
    """Exact GP posterior predictive at the query points."""
    x, y = train
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    query = np.atleast_2d(np.asarray(query, dtype=np.float64))
    gram = cross_gram(cfg, x, x) + cfg.white_noise * np.eye(x.shape[0])
    factor = linalg.cholesky(gram)
    k_star = cross_gram(cfg, x, query)  # (N, Q)
    mean = k_star.T @ linalg.solve_spd(factor, y)
    epi = cfg.amplitude - np.einsum("nq,nq->q", k_star, linalg.solve_spd(factor, k_star))
    epi = np.maximum(epi, 0.0)
    return PredictiveDistribution(
        mean=mean, total_var=epi + cfg.white_noise, epistemic_var=epi, sigma2=cfg.white_noise
    )
