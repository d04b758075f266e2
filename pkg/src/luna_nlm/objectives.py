"""Training losses.

All objectives are returned as losses (negated log-objectives) together with
analytic gradients, flattened in the parameter order the trainer uses:
``[trunk theta; heads]``.

The multi-head objective pairs a data-fit term (average head log-likelihood,
l2-penalized) with a diversity penalty on the heads' input gradients. Input
gradients are forward finite differences with Gaussian per-dimension
perturbations shared across heads; each head's difference quotients over the
whole batch are stacked into one vector, and the penalty is the sum of squared
cosine similarities over head pairs. Squared cosines are scale-free, so the
penalty pressures the *directions* in which heads extrapolate, not their
magnitudes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import blr, nn
from .nn import FeatureMapParams, augment_bias

_NORM_EPS = 1e-12  # vectors below this norm count as degenerate gradients


class _DegenerateCounter:
    """Counts cosine evaluations that hit a near-zero gradient vector."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


degenerate_gradients = _DegenerateCounter()


@dataclass
class LunaParams:
    """Shared trunk plus M auxiliary linear heads (rows of ``heads``).

    Head length is L+1: heads act on the bias-augmented feature vector. M = 1
    is permitted (it degenerates to single-head training); the diversity
    penalty requires M >= 2.
    """

    trunk: FeatureMapParams
    heads: np.ndarray

    def __post_init__(self):
        self.heads = np.atleast_2d(np.asarray(self.heads, dtype=np.float64))
        if self.heads.shape[1] != self.trunk.n_features + 1:
            raise ValueError(
                f"heads have length {self.heads.shape[1]}, expected {self.trunk.n_features + 1}"
            )

    @property
    def n_heads(self) -> int:
        return self.heads.shape[0]

    @property
    def n_params(self) -> int:
        return self.trunk.n_params + self.heads.size

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.trunk.to_vector(), self.heads.ravel()])

    def from_vector(self, psi: np.ndarray) -> "LunaParams":
        psi = np.asarray(psi, dtype=np.float64)
        if psi.shape != (self.n_params,):
            raise ValueError(f"expected vector of length {self.n_params}, got {psi.shape}")
        nt = self.trunk.n_params
        return LunaParams(self.trunk.from_vector(psi[:nt]), psi[nt:].reshape(self.heads.shape).copy())


@dataclass
class AnnealSchedule:
    """Diversity-weight schedule over a training horizon of T epochs.

    ``scale_c`` is the batch/pair normalizer C = 2B / (M (M-1)) so the
    penalty carries the same weight across batch sizes and head counts.
    """

    kind: str = "constant"
    scale_c: float = 1.0
    horizon: int = 1

    def __post_init__(self):
        if self.kind not in ("sqrt", "sigmoid", "tanh", "constant"):
            raise ValueError(f"unknown anneal kind {self.kind!r}")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.scale_c < 0:
            raise ValueError("scale_c must be nonnegative")


def pair_scale(batch_size: int, n_heads: int) -> float:
    """C = 2B / (M (M-1))."""
    if n_heads < 2:
        raise ValueError("pair scale needs at least two heads")
    return 2.0 * batch_size / (n_heads * (n_heads - 1))


def anneal_weight(sched: AnnealSchedule, t: int, lam: float) -> float:
    """Effective diversity weight at epoch t: lam * C * f_kind(t/T)."""
    if t < 0:
        raise ValueError("epoch must be nonnegative")
    frac = min(t, sched.horizon) / sched.horizon
    if sched.kind == "sqrt":
        f = math.sqrt(frac)
    elif sched.kind == "sigmoid":
        f = 1.0 / (1.0 + math.exp(-6.0 * frac + 3.0))
    elif sched.kind == "tanh":
        f = (math.tanh(6.0 * frac - 3.0) + 1.0) / 2.0
    else:
        f = 1.0
    return lam * sched.scale_c * f


@dataclass
class PerturbationConfig:
    """Finite-difference probe: per-dimension Gaussian perturbation variance.

    ``epsilon`` is a variance (scalar or one value per input dimension),
    typically set from the squared range of the training inputs.
    """

    epsilon: float | np.ndarray
    rng_seed: int = 0

    def __post_init__(self):
        eps = np.asarray(self.epsilon, dtype=np.float64)
        if np.any(eps <= 0):
            raise ValueError("epsilon must be positive")
        self.epsilon = eps

    def sample(self, n_points: int, n_dims: int, rng: np.random.Generator | None = None) -> np.ndarray:
        """Draw (n_points, n_dims) perturbations, resampling any |delta| < 1e-8."""
        if rng is None:
            rng = np.random.default_rng(self.rng_seed)
        sd = np.broadcast_to(np.sqrt(self.epsilon), (n_dims,))
        delta = rng.normal(0.0, sd, size=(n_points, n_dims))
        bad = np.abs(delta) < 1e-8
        while np.any(bad):
            delta[bad] = rng.normal(0.0, np.broadcast_to(sd, delta.shape)[bad])
            bad = np.abs(delta) < 1e-8
        return delta


def _check_batch(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"batch has {x.shape[0]} inputs but {y.shape[0]} targets")
    return x, y


def map_loss(
    trunk: FeatureMapParams,
    head: np.ndarray,
    batch: tuple[np.ndarray, np.ndarray],
    gamma: float,
    sigma2: float,
) -> tuple[float, np.ndarray]:
    """Negative MAP objective for the deterministically trained full network.

    loss = N/2 log(2 pi sigma2) + ||y - Phi head||^2/(2 sigma2)
           + gamma (||theta||^2 + ||head||^2);  gamma = 0 gives MLE.

    Gradient layout: [theta; head].
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    x, y = _check_batch(*batch)
    head = np.asarray(head, dtype=np.float64).ravel()
    n = y.shape[0]
    feats, tape = nn.forward(trunk, x)
    design = augment_bias(feats)
    if design.shape[1] != head.shape[0]:
        raise ValueError(f"head length {head.shape[0]} does not match design width {design.shape[1]}")
    resid = design @ head - y
    theta = trunk.to_vector()
    loss = (
        0.5 * n * np.log(2.0 * np.pi * sigma2)
        + resid @ resid / (2.0 * sigma2)
        + gamma * (theta @ theta + head @ head)
    )
    cot = np.outer(resid / sigma2, head[1:])
    grad_theta = nn.backward(trunk, tape, cot) + 2.0 * gamma * theta
    grad_head = design.T @ resid / sigma2 + 2.0 * gamma * head
    return float(loss), np.concatenate([grad_theta, grad_head])


def marginal_loss(
    trunk: FeatureMapParams,
    batch: tuple[np.ndarray, np.ndarray],
    gamma: float,
    sigma2: float,
    alpha: float,
) -> tuple[float, np.ndarray]:
    """Negative evidence plus gamma ||theta||^2, with gradient over theta."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    x, y = _check_batch(*batch)
    feats, tape = nn.forward(trunk, x)
    design = augment_bias(feats)
    value, grad_design = blr.log_marginal_gradient_wrt_design(design, y, sigma2, alpha)
    theta = trunk.to_vector()
    loss = -value + gamma * theta @ theta
    grad_theta = nn.backward(trunk, tape, -grad_design[:, 1:]) + 2.0 * gamma * theta
    return float(loss), grad_theta


def luna_fit_loss(
    psi: LunaParams,
    batch: tuple[np.ndarray, np.ndarray],
    gamma: float,
    sigma2: float,
) -> tuple[float, np.ndarray]:
    """Average-head negative log-likelihood with l2 penalty on all of psi."""
    x, y = _check_batch(*batch)
    feats, tape = nn.forward(psi.trunk, x)
    design = augment_bias(feats)
    loss, cot, grad_heads = _fit_terms(psi, design, y, gamma, sigma2)
    grad_theta = nn.backward(psi.trunk, tape, cot[:, 1:]) + 2.0 * gamma * psi.trunk.to_vector()
    return float(loss), np.concatenate([grad_theta, grad_heads.ravel()])


def _fit_terms(psi: LunaParams, design: np.ndarray, y: np.ndarray, gamma: float, sigma2: float):
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    n = y.shape[0]
    m = psi.n_heads
    resid = design @ psi.heads.T - y[:, None]  # (N, M)
    theta = psi.trunk.to_vector()
    loss = (
        0.5 * n * np.log(2.0 * np.pi * sigma2)
        + float(np.sum(resid**2)) / (2.0 * sigma2 * m)
        + gamma * (theta @ theta + float(np.sum(psi.heads**2)))
    )
    cot_design = resid @ psi.heads / (sigma2 * m)  # (N, K)
    grad_heads = resid.T @ design / (sigma2 * m) + 2.0 * gamma * psi.heads
    return loss, cot_design, grad_heads


def cos_sim_sq(u: np.ndarray, v: np.ndarray) -> float:
    """Squared cosine similarity (u.v)^2 / (|u|^2 |v|^2) in [0, 1].

    Either vector with norm below 1e-12 yields 0 and bumps the
    degenerate-gradient counter.
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError("vectors must have equal length")
    uu = u @ u
    vv = v @ v
    if uu < _NORM_EPS**2 or vv < _NORM_EPS**2:
        degenerate_gradients.count += 1
        return 0.0
    return float((u @ v) ** 2 / (uu * vv))


def fd_input_gradient(
    psi: LunaParams,
    head_index: int,
    x: np.ndarray,
    perturb: PerturbationConfig,
) -> np.ndarray:
    """Forward-difference input gradient of one head at a single point."""
    x = np.asarray(x, dtype=np.float64).ravel()
    d = x.shape[0]
    delta = perturb.sample(1, d)[0]
    pts = np.vstack([x[None, :], x[None, :] + np.diag(delta)])
    feats, _ = nn.forward(psi.trunk, pts)
    vals = augment_bias(feats) @ psi.heads[head_index]
    return (vals[1:] - vals[0]) / delta


def _stacked_fd(psi: LunaParams, x: np.ndarray, delta: np.ndarray):
    """One forward pass over the batch and its D single-dimension perturbations.

    Returns (design rows for the unperturbed batch, tape, quotient features
    Fd of shape (N, D, K), full stacked design).
    """
    n, d = x.shape
    blocks = [x]
    for j in range(d):
        xp = x.copy()
        xp[:, j] += delta[:, j]
        blocks.append(xp)
    feats, tape = nn.forward(psi.trunk, np.vstack(blocks))
    design = augment_bias(feats)
    base = design[:n]
    fd = np.empty((n, d, design.shape[1]))
    for j in range(d):
        fd[:, j, :] = (design[(j + 1) * n : (j + 2) * n] - base) / delta[:, j][:, None]
    return base, tape, fd, design


def _diverse_terms(psi: LunaParams, fd: np.ndarray):
    """Pairwise squared cosines of batch-stacked head gradients.

    Returns (loss, dloss/dU, U) with U of shape (N*D, M); degenerate heads
    (near-zero stacked gradient) contribute nothing.
    """
    n, d, k = fd.shape
    m = psi.n_heads
    u = fd.reshape(n * d, k) @ psi.heads.T  # (N*D, M)
    s = u.T @ u
    norms = np.diag(s).copy()
    ok = norms >= _NORM_EPS**2
    n_ok = int(np.sum(ok))
    degenerate_gradients.count += m * (m - 1) // 2 - n_ok * (n_ok - 1) // 2
    safe = np.where(ok, norms, 1.0)
    cos2 = s**2 / np.outer(safe, safe)
    mask = np.outer(ok, ok)
    np.fill_diagonal(mask, False)
    cos2 = np.where(mask, cos2, 0.0)
    iu = np.triu_indices(m, 1)
    loss = float(cos2[iu].sum())
    w1 = np.where(mask, 2.0 * s / np.outer(safe, safe), 0.0)
    w2 = np.where(mask, 2.0 * s**2 / np.outer(safe**2, safe), 0.0)
    du = u @ w1.T - u * w2.sum(axis=1)[None, :]
    return loss, du, u


def luna_diverse_loss(
    psi: LunaParams,
    batch: tuple[np.ndarray, np.ndarray],
    perturb: PerturbationConfig,
) -> tuple[float, np.ndarray]:
    """Diversity penalty and its gradient over all of psi.

    Gradients flow through both the finite-difference feature quotients (into
    the trunk) and the cosine expression (into the heads).
    """
    if psi.n_heads < 2:
        raise ValueError("diversity penalty needs at least two heads")
    x, _y = _check_batch(*batch)
    delta = perturb.sample(x.shape[0], x.shape[1])
    _base, tape, fd, _design = _stacked_fd(psi, x, delta)
    loss, du, _u = _diverse_terms(psi, fd)
    grad_theta, grad_heads = _diverse_backward(psi, tape, fd, du, delta)
    return loss, np.concatenate([grad_theta, grad_heads.ravel()])


def _diverse_backward(psi: LunaParams, tape, fd, du, delta, extra_cot_base=None):
    n, d, k = fd.shape
    grad_heads = du.T @ fd.reshape(n * d, k)
    dfd = (du @ psi.heads).reshape(n, d, k)
    cot = np.zeros((n * (d + 1), k))
    if extra_cot_base is not None:
        cot[:n] = extra_cot_base
    for j in range(d):
        quotient_cot = dfd[:, j, :] / delta[:, j][:, None]
        cot[(j + 1) * n : (j + 2) * n] += quotient_cot
        cot[:n] -= quotient_cot
    grad_theta = nn.backward(psi.trunk, tape, cot[:, 1:])
    return grad_theta, grad_heads


def luna_loss(
    psi: LunaParams,
    batch: tuple[np.ndarray, np.ndarray],
    gamma: float,
    lambda_eff: float,
    sigma2: float,
    perturb: PerturbationConfig,
    delta: np.ndarray | None = None,
) -> tuple[float, np.ndarray, float, float]:
    """Full objective: fit loss + lambda_eff * diversity loss.

    Shares a single stacked forward/backward pass between the two terms.
    Returns (loss, gradient, fit component, diversity component); ``delta``
    lets a caller supply pre-sampled perturbations (the trainer's per-step
    stream).
    """
    if lambda_eff < 0:
        raise ValueError("lambda_eff must be nonnegative")
    if psi.n_heads < 2:
        raise ValueError("the full objective needs at least two heads")
    x, y = _check_batch(*batch)
    if delta is None:
        delta = perturb.sample(x.shape[0], x.shape[1])
    base, tape, fd, _design = _stacked_fd(psi, x, delta)
    fit, cot_fit, grad_heads_fit = _fit_terms(psi, base, y, gamma, sigma2)
    div, du, _u = _diverse_terms(psi, fd)
    grad_theta, grad_heads_div = _diverse_backward(
        psi, tape, fd, lambda_eff * du, delta, extra_cot_base=cot_fit
    )
    grad_theta = grad_theta + 2.0 * gamma * psi.trunk.to_vector()
    grad_heads = grad_heads_fit + grad_heads_div
    loss = fit + lambda_eff * div
    return float(loss), np.concatenate([grad_theta, grad_heads.ravel()]), float(fit), float(div)
