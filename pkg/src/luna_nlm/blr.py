"""Exact Bayesian linear regression on a feature basis.

Model: y ~ N(Phi w, sigma2 I), w ~ N(0, alpha I), with Phi the bias-augmented
design matrix. Everything is conjugate:

    V_N^{-1} = (1/alpha) I + (1/sigma2) Phi^T Phi
    w_N      = (1/sigma2) V_N Phi^T y

and the predictive at a row phi is N(w_N^T phi, sigma2 + phi^T V_N phi). The
log marginal likelihood (evidence) equals the log density of y under
N(0, sigma2 I + alpha Phi Phi^T); :func:`log_marginal_likelihood` computes it
via the equivalent feature-space expansion

    -N/2 log(2 pi sigma2) - ||y - Phi w_N||^2 / (2 sigma2)
    - K/2 log(alpha) - ||w_N||^2 / (2 alpha) - 1/2 log|V_N^{-1}|

which costs one K x K Cholesky instead of an N x N one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .nn import FeatureMapParams, augment_bias, forward


@dataclass(frozen=True)
class BlrPosterior:
    """Gaussian posterior over the last-layer weights."""

    w_n: np.ndarray
    v_n: np.ndarray
    sigma2: float
    alpha: float

    @property
    def dim(self) -> int:
        return self.w_n.shape[0]


@dataclass(frozen=True)
class PredictiveDistribution:
    """Per-point Gaussian predictive moments."""

    mean: np.ndarray
    total_var: np.ndarray
    epistemic_var: np.ndarray
    sigma2: float

    def __len__(self) -> int:
        return self.mean.shape[0]


def _check_hyper(sigma2: float, alpha: float) -> None:
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")


def fit_posterior(design: np.ndarray, y: np.ndarray, sigma2: float, alpha: float) -> BlrPosterior:
    """Posterior moments, via Cholesky of V_N^{-1} (no explicit inverse)."""
    _check_hyper(sigma2, alpha)
    design = np.atleast_2d(np.asarray(design, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    n, k = design.shape
    if y.shape[0] != n:
        raise ValueError(f"design has {n} rows but y has {y.shape[0]}")
    prec = np.eye(k) / alpha + design.T @ design / sigma2
    factor = linalg.cholesky(prec)
    w_n = linalg.solve_spd(factor, design.T @ y) / sigma2
    v_n = linalg.solve_spd(factor, np.eye(k))
    v_n = 0.5 * (v_n + v_n.T)
    return BlrPosterior(w_n=w_n, v_n=v_n, sigma2=float(sigma2), alpha=float(alpha))


def predict(post: BlrPosterior, design_star: np.ndarray) -> PredictiveDistribution:
    """Predictive moments at each row of ``design_star``."""
    design_star = np.atleast_2d(np.asarray(design_star, dtype=np.float64))
    if design_star.shape[1] != post.dim:
        raise ValueError(f"design has {design_star.shape[1]} columns, posterior has dim {post.dim}")
    mean = design_star @ post.w_n
    epi = np.einsum("ij,jk,ik->i", design_star, post.v_n, design_star)
    epi = np.maximum(epi, 0.0)
    return PredictiveDistribution(mean=mean, total_var=post.sigma2 + epi, epistemic_var=epi, sigma2=post.sigma2)


def log_marginal_likelihood(design: np.ndarray, y: np.ndarray, sigma2: float, alpha: float) -> float:
    """Evidence log p(y) with the last-layer weights integrated out."""
    _check_hyper(sigma2, alpha)
    design = np.atleast_2d(np.asarray(design, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    n, k = design.shape
    if n == 0:
        return 0.0
    prec = np.eye(k) / alpha + design.T @ design / sigma2
    factor = linalg.cholesky(prec)
    w_n = linalg.solve_spd(factor, design.T @ y) / sigma2
    resid = y - design @ w_n
    return float(
        -0.5 * n * np.log(2.0 * np.pi * sigma2)
        - resid @ resid / (2.0 * sigma2)
        - 0.5 * k * np.log(alpha)
        - w_n @ w_n / (2.0 * alpha)
        - 0.5 * linalg.logdet_spd(factor)
    )


def log_marginal_gradient_wrt_design(
    design: np.ndarray, y: np.ndarray, sigma2: float, alpha: float
) -> tuple[float, np.ndarray]:
    """Evidence and its gradient w.r.t. the design matrix.

    d log p(y) / d Phi = alpha (beta beta^T - Sigma^{-1}) Phi with
    Sigma = sigma2 I + alpha Phi Phi^T and beta = Sigma^{-1} y; evaluated in
    feature space through the Woodbury identity, so the cost stays K x K.
    """
    _check_hyper(sigma2, alpha)
    design = np.atleast_2d(np.asarray(design, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    n, k = design.shape
    if n == 0:
        return 0.0, np.zeros_like(design)
    prec = np.eye(k) / alpha + design.T @ design / sigma2
    factor = linalg.cholesky(prec)
    w_n = linalg.solve_spd(factor, design.T @ y) / sigma2
    resid = y - design @ w_n
    value = (
        -0.5 * n * np.log(2.0 * np.pi * sigma2)
        - resid @ resid / (2.0 * sigma2)
        - 0.5 * k * np.log(alpha)
        - w_n @ w_n / (2.0 * alpha)
        - 0.5 * linalg.logdet_spd(factor)
    )
    beta = resid / sigma2
    # Sigma^{-1} Phi = Phi/sigma2 - Phi V_N (Phi^T Phi) / sigma2^2
    sinv_phi = design / sigma2 - design @ linalg.solve_spd(factor, design.T @ design) / sigma2**2
    grad = alpha * (np.outer(beta, beta @ design) - sinv_phi)
    return float(value), grad


def sample_functions(
    params: FeatureMapParams,
    alpha: float,
    x_grid: np.ndarray,
    n_samples: int,
    source: BlrPosterior | str = "prior",
    rng_seed: int = 0,
) -> np.ndarray:
    """Function draws on a grid: rows are Phi(x_grid) @ w for w sampled from
    the prior N(0, alpha I) or from a fitted posterior."""
    x_grid = np.atleast_2d(np.asarray(x_grid, dtype=np.float64))
    feats, _ = forward(params, x_grid)
    design = augment_bias(feats)
    k = design.shape[1]
    rng = np.random.default_rng(rng_seed)
    if isinstance(source, str):
        if source != "prior":
            raise ValueError(f"source must be 'prior' or a BlrPosterior, got {source!r}")
        w = np.sqrt(alpha) * rng.standard_normal((n_samples, k))
    else:
        chol = linalg.cholesky(source.v_n).lower
        w = source.w_n[None, :] + rng.standard_normal((n_samples, k)) @ chol.T
    return w @ design.T
