"""Dense SPD linear algebra used by the Bayesian head and the GP reference.

All routines work on float64 arrays and factor through a single Cholesky
decomposition; matrices are never inverted explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack, solve_triangular


class DecompositionError(np.linalg.LinAlgError):
    """Cholesky failed: the input is not positive definite.

    ``pivot`` is the 0-based index of the first non-positive pivot.
    """

    def __init__(self, pivot: int):
        self.pivot = pivot
        super().__init__(f"matrix is not positive definite: pivot {pivot} is not positive")


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular L with L @ L.T equal to the factored SPD matrix."""

    lower: np.ndarray

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


def cholesky(a: np.ndarray, jitter: bool = True) -> CholeskyFactor:
    """Factor an SPD matrix A = L L^T.

    On a non-positive pivot, retries once with ``1e-8 * mean(diag)`` added to
    the diagonal (near-singular posteriors with tiny prior variance), then
    raises :class:`DecompositionError` naming the failing pivot.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] == 0:
        return CholeskyFactor(np.zeros((0, 0)))
    c, info = lapack.dpotrf(a, lower=1, clean=1)
    if info == 0:
        return CholeskyFactor(c)
    if info < 0:
        raise ValueError(f"illegal value in argument {-info} of dpotrf")
    if jitter:
        bump = 1e-8 * float(np.mean(np.diag(a)))
        c, info = lapack.dpotrf(a + bump * np.eye(a.shape[0]), lower=1, clean=1)
        if info == 0:
            return CholeskyFactor(c)
    raise DecompositionError(pivot=info - 1)


def solve_spd(factor: CholeskyFactor, b: np.ndarray) -> np.ndarray:
    """Solve A x = b given A = L L^T, by forward then back substitution."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != factor.dim:
        raise ValueError(f"dimension mismatch: factor is {factor.dim}, b has leading dim {b.shape[0]}")
    y = solve_triangular(factor.lower, b, lower=True)
    return solve_triangular(factor.lower, y, lower=True, trans="T")


def logdet_spd(factor: CholeskyFactor) -> float:
    """log|A| = 2 sum(log L_ii)."""
    return 2.0 * float(np.sum(np.log(np.diag(factor.lower))))
