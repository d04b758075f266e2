"""Mini-batch training, restarts, model selection, and hyperparameter search.

Training runs in two steps: first-order optimization of the configured
objective over the feature-map parameters (plus point-estimate heads where
the objective has them), then an exact Bayesian linear regression refit on
the full training set with the heads discarded.

Data is standardized internally by default (train-split z-scores); the
supplied ``sigma2`` is interpreted in the original target units and rescaled
accordingly, and every prediction is mapped back to original units, so
metrics never see standardized values.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import blr, metrics, nn, objectives
from .data import GapDataset, Split, Standardization, fit_stats
from .objectives import AnnealSchedule, LunaParams, PerturbationConfig

logger = logging.getLogger(__name__)

OBJECTIVES = ("mle", "map", "marginal", "luna")


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"non-finite loss at epoch {epoch}")


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "luna"
    hidden: tuple[int, ...] = (50, 20)  # widths; the last entry is the feature count
    activation: str = "relu"
    epochs: int = 3000
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    gamma: float = 1e-2
    lam: float = 50.0
    alpha: float = 1.5e-3
    sigma2: float = 9.0
    n_heads: int = 20
    anneal: str = "sqrt"
    restarts: int = 1
    seed: int = 0
    epsilon_scale: float = 0.12  # FD probe sd as a fraction of the per-dim train range
    standardize: bool = True

    def validate(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs must be >= 0, batch_size >= 1, learning_rate > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.gamma < 0 or self.lam < 0:
            raise ValueError("gamma and lam must be nonnegative")
        if self.sigma2 <= 0 or self.alpha <= 0:
            raise ValueError("sigma2 and alpha must be positive")
        if self.objective == "luna" and self.n_heads < 2:
            raise ValueError("the diversity objective needs at least 2 heads")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if not self.hidden:
            raise ValueError("need at least one hidden layer")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    fit_loss: float
    diverse_loss: float
    effective_lambda: float


def _identity_stats(dim: int) -> Standardization:
    return Standardization(x_mean=np.zeros(dim), x_std=np.ones(dim), y_mean=0.0, y_std=1.0)


@dataclass
class TrainedModel:
    """Feature map plus analytic posterior, with the training record."""

    feature_map: nn.FeatureMapParams
    posterior: blr.BlrPosterior
    config: TrainConfig
    history: list[EpochStats] = field(repr=False)
    diversity_score: float
    stats: Standardization

    def transform_x(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return (x - self.stats.x_mean) / self.stats.x_std

    def design(self, x: np.ndarray) -> np.ndarray:
        feats, _ = nn.forward(self.feature_map, self.transform_x(x))
        return nn.augment_bias(feats)

    def predict(self, x: np.ndarray) -> blr.PredictiveDistribution:
        """Predictive moments in the original target units."""
        pred = blr.predict(self.posterior, self.design(x))
        s = self.stats.y_std
        return blr.PredictiveDistribution(
            mean=pred.mean * s + self.stats.y_mean,
            total_var=pred.total_var * s**2,
            epistemic_var=pred.epistemic_var * s**2,
            sigma2=pred.sigma2 * s**2,
        )


class _Adam:
    def __init__(self, size: int, lr: float):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.lr = lr

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = 0.9 * self.m + 0.1 * grad
        self.v = 0.999 * self.v + 0.001 * grad * grad
        mhat = self.m / (1.0 - 0.9**self.t)
        vhat = self.v / (1.0 - 0.999**self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + 1e-8)


class _Sgd:
    def __init__(self, size: int, lr: float):
        self.lr = lr

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        params -= self.lr * grad


def _standardize_xy(split: Split, stats: Standardization) -> tuple[np.ndarray, np.ndarray]:
    return (split.x - stats.x_mean) / stats.x_std, (split.y - stats.y_mean) / stats.y_std


def train(config: TrainConfig, data: GapDataset) -> TrainedModel:
    """Run Step I (feature learning) then Step II (posterior refit)."""
    config.validate()
    if len(data.train) == 0:
        raise ValueError("training split is empty")
    stats = fit_stats(data.train) if config.standardize else _identity_stats(data.input_dim)
    x_train, y_train = _standardize_xy(data.train, stats)
    sigma2 = config.sigma2 / stats.y_std**2
    n = x_train.shape[0]
    d = x_train.shape[1]
    k = config.hidden[-1] + 1

    init_rng = np.random.default_rng([config.seed, 0xA])
    shuffle_rng = np.random.default_rng([config.seed, 0xB])
    perturb_rng = np.random.default_rng([config.seed, 0xC])

    trunk = nn.init_params([d] + list(config.hidden), config.activation, init_rng)
    n_heads = config.n_heads if config.objective == "luna" else 1
    head_lim = math.sqrt(6.0 / (k + 1))
    heads = init_rng.uniform(-head_lim, head_lim, size=(n_heads, k))
    psi = LunaParams(trunk, heads)

    if config.objective == "marginal":
        vec = trunk.to_vector()
    else:
        vec = psi.to_vector()
    opt = (_Adam if config.optimizer == "adam" else _Sgd)(vec.size, config.learning_rate)

    batch = min(config.batch_size, n)
    perturb = None
    sched = None
    if config.objective == "luna":
        eps_sd = config.epsilon_scale * data.input_range() / stats.x_std
        eps_sd = np.where(eps_sd > 0, eps_sd, config.epsilon_scale)
        perturb = PerturbationConfig(epsilon=eps_sd**2, rng_seed=int(perturb_rng.integers(2**31)))
        sched = AnnealSchedule(
            kind=config.anneal,
            scale_c=objectives.pair_scale(batch, config.n_heads),
            horizon=max(config.epochs, 1),
        )

    history: list[EpochStats] = []
    for epoch in range(1, config.epochs + 1):
        lam_eff = objectives.anneal_weight(sched, epoch, config.lam) if sched else 0.0
        order = shuffle_rng.permutation(n)
        fit_sum = 0.0
        div_sum = 0.0
        n_batches = 0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            xb, yb = x_train[idx], y_train[idx]
            if config.objective == "luna":
                psi = psi.from_vector(vec)
                delta = perturb.sample(xb.shape[0], d, perturb_rng)
                loss, grad, fit, div = objectives.luna_loss(
                    psi, (xb, yb), config.gamma, lam_eff, sigma2, perturb, delta=delta
                )
            elif config.objective == "marginal":
                trunk = trunk.from_vector(vec)
                loss, grad = objectives.marginal_loss(trunk, (xb, yb), config.gamma, sigma2, config.alpha)
                fit, div = loss, 0.0
            else:
                psi = psi.from_vector(vec)
                gamma = 0.0 if config.objective == "mle" else config.gamma
                loss, grad = objectives.map_loss(psi.trunk, psi.heads[0], (xb, yb), gamma, sigma2)
                fit, div = loss, 0.0
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingDivergedError(epoch)
            opt.step(vec, grad)
            fit_sum += fit
            div_sum += div
            n_batches += 1
        history.append(EpochStats(epoch, fit_sum / n_batches, div_sum / n_batches, lam_eff))

    if config.objective == "marginal":
        trunk = trunk.from_vector(vec)
    else:
        psi = psi.from_vector(vec)
        trunk = psi.trunk

    feats, _ = nn.forward(trunk, x_train)
    posterior = blr.fit_posterior(nn.augment_bias(feats), y_train, sigma2, config.alpha)

    diversity = float("nan")
    if config.objective == "luna":
        probe = data.val if len(data.val) > 0 else data.train
        x_probe, y_probe = _standardize_xy(probe, stats)
        probe_perturb = PerturbationConfig(epsilon=perturb.epsilon, rng_seed=config.seed)
        div_loss, _ = objectives.luna_diverse_loss(psi, (x_probe, y_probe), probe_perturb)
        diversity = div_loss / (config.n_heads * (config.n_heads - 1) / 2)

    return TrainedModel(
        feature_map=trunk,
        posterior=posterior,
        config=config,
        history=history,
        diversity_score=diversity,
        stats=stats,
    )


def random_restarts(config: TrainConfig, data: GapDataset, r: int) -> list[TrainedModel]:
    """R independent trainings with seeds seed+0 .. seed+R-1.

    A failed restart is logged and skipped; at least one must succeed.
    """
    if r < 1:
        raise ValueError("need at least one restart")
    models = []
    for i in range(r):
        cfg = replace(config, seed=config.seed + i)
        try:
            models.append(train(cfg, data))
        except (TrainingDivergedError, np.linalg.LinAlgError) as exc:
            logger.warning("restart %d (seed %d) failed: %s", i, cfg.seed, exc)
    if not models:
        raise RuntimeError(f"all {r} restarts failed")
    return models


def validation_ll(model: TrainedModel, val: tuple[np.ndarray, np.ndarray]) -> float:
    x, y = val
    return metrics.avg_ll(model.predict(x), y)


def select_model(candidates: list[TrainedModel], val: tuple[np.ndarray, np.ndarray]) -> TrainedModel:
    """Keep the top 10% by validation log-likelihood (at least one), then take
    the lowest normalized diversity score; ties break toward higher validation
    log-likelihood, then lower candidate index."""
    if not candidates:
        raise ValueError("no candidates to select from")
    lls = [validation_ll(m, val) for m in candidates]
    keep = math.ceil(0.1 * len(candidates))
    by_ll = sorted(range(len(candidates)), key=lambda i: (-lls[i], i))[:keep]
    div = lambda i: candidates[i].diversity_score
    best = min(by_ll, key=lambda i: (div(i) if np.isfinite(div(i)) else np.inf, -lls[i], i))
    return candidates[best]


def hyper_search(
    grid: list[dict],
    config: TrainConfig,
    data: GapDataset,
) -> tuple[TrainedModel, list[dict]]:
    """Train per grid point (``config.restarts`` restarts each) and apply the
    selection rule jointly across every candidate from every point."""
    if not grid:
        raise ValueError("empty hyperparameter grid")
    candidates: list[TrainedModel] = []
    rows: list[dict] = []
    for point in grid:
        cfg = replace(config, **point)
        try:
            models = random_restarts(cfg, data, cfg.restarts)
        except RuntimeError as exc:
            logger.warning("grid point %s failed entirely: %s", point, exc)
            continue
        for m in models:
            candidates.append(m)
            rows.append(
                {
                    "gamma": m.config.gamma,
                    "lam": m.config.lam,
                    "alpha": m.config.alpha,
                    "seed": m.config.seed,
                    "val_ll": validation_ll(m, (data.val.x, data.val.y)),
                    "diversity": m.diversity_score,
                    "selected": False,
                }
            )
    if not candidates:
        raise RuntimeError("every grid point failed")
    best = select_model(candidates, (data.val.x, data.val.y))
    best_index = next(i for i, m in enumerate(candidates) if m is best)
    rows[best_index]["selected"] = True
    return best, rows


def refit_head(model: TrainedModel, new_data: tuple[np.ndarray, np.ndarray]) -> TrainedModel:
    """Freeze the feature map and fit a fresh posterior on new data.

    Empty data reverts the head to its prior.
    """
    x, y = new_data
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(y) == 0:
        k = model.posterior.dim
        posterior = blr.BlrPosterior(
            w_n=np.zeros(k),
            v_n=model.posterior.alpha * np.eye(k),
            sigma2=model.posterior.sigma2,
            alpha=model.posterior.alpha,
        )
    else:
        if x.shape[1] != model.feature_map.input_dim:
            raise ValueError(
                f"new data has {x.shape[1]} input dims, model expects {model.feature_map.input_dim}"
            )
        design = model.design(x)
        y_std = (y - model.stats.y_mean) / model.stats.y_std
        posterior = blr.fit_posterior(design, y_std, model.posterior.sigma2, model.posterior.alpha)
    return replace_model(model, posterior)


def replace_model(model: TrainedModel, posterior: blr.BlrPosterior) -> TrainedModel:
    return TrainedModel(
        feature_map=model.feature_map,
        posterior=posterior,
        config=model.config,
        history=model.history,
        diversity_score=model.diversity_score,
        stats=model.stats,
    )
