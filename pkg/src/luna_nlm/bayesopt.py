"""Sequential optimization with pluggable surrogates over standard benchmarks.

Each step refits the surrogate from scratch on all observations (inputs
rescaled to the unit box, outputs z-scored), maximizes expected improvement
over a fixed candidate set (a scrambled Sobol design plus local perturbations
of the incumbent), and evaluates the winner. A surrogate failure falls back
to a random query for that step and is flagged in the trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr
from scipy.stats import qmc

from . import gp, trainer
from .data import GapDataset, Split

N_SOBOL_CANDIDATES = 2048
N_LOCAL_CANDIDATES = 512
LOCAL_SD = 0.05  # fraction of the box width around the incumbent


def branin(x: np.ndarray) -> float:
    """Two-dimensional benchmark with three global minima and shallow valleys."""
    x1, x2 = float(x[0]), float(x[1])
    a = x2 - 5.1 / (4.0 * math.pi**2) * x1**2 + 5.0 / math.pi * x1 - 6.0
    return a**2 + 10.0 * (1.0 - 1.0 / (8.0 * math.pi)) * math.cos(x1) + 10.0


_HARTMANN6_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_HARTMANN6_A = np.array(
    [
        [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
        [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
        [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
        [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
    ]
)
_HARTMANN6_P = 1e-4 * np.array(
    [
        [1312, 1696, 5569, 124, 8283, 5886],
        [2329, 4135, 8307, 3736, 1004, 9991],
        [2348, 1451, 3522, 2883, 3047, 6650],
        [4047, 8828, 8732, 5743, 1091, 381],
    ]
)


def hartmann6(x: np.ndarray) -> float:
    """Six-dimensional benchmark on the unit hypercube; nonpositive there."""
    x = np.asarray(x, dtype=np.float64).ravel()
    inner = np.sum(_HARTMANN6_A * (x[None, :] - _HARTMANN6_P) ** 2, axis=1)
    return float(-np.sum(_HARTMANN6_ALPHA * np.exp(-inner)))


@dataclass(frozen=True)
class Benchmark:
    name: str
    dim: int
    lower: np.ndarray
    upper: np.ndarray
    fn: Callable[[np.ndarray], float]
    optimum_value: float
    optima: np.ndarray  # one optimum location per row

    def __call__(self, x: np.ndarray) -> float:
        return float(self.fn(np.asarray(x, dtype=np.float64)))


BENCHMARKS = {
    "branin": Benchmark(
        name="branin",
        dim=2,
        lower=np.array([-5.0, 0.0]),
        upper=np.array([10.0, 15.0]),
        fn=branin,
        optimum_value=0.397887,
        optima=np.array([[-math.pi, 12.275], [math.pi, 2.275], [9.42478, 2.475]]),
    ),
    "hartmann6": Benchmark(
        name="hartmann6",
        dim=6,
        lower=np.zeros(6),
        upper=np.ones(6),
        fn=hartmann6,
        optimum_value=-3.32237,
        optima=np.array([[0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573]]),
    ),
}

DEFAULT_INIT = {"branin": 5, "hartmann6": 10}


def expected_improvement(mean: np.ndarray, variance: np.ndarray, best: float) -> np.ndarray:
    """Minimization EI: E[max(best - Y, 0)] for Y ~ N(mean, variance)."""
    mean = np.asarray(mean, dtype=np.float64)
    variance = np.asarray(variance, dtype=np.float64)
    if np.any(variance < 0):
        raise ValueError("variance must be nonnegative")
    sd = np.sqrt(variance)
    improve = best - mean
    out = np.maximum(improve, 0.0)
    pos = sd > 0
    z = improve[pos] / sd[pos]
    ei = improve[pos] * ndtr(z) + sd[pos] * np.exp(-0.5 * z**2) / np.sqrt(2.0 * np.pi)
    result = np.asarray(out, dtype=np.float64).copy()
    result[pos] = ei
    return result


@dataclass(frozen=True)
class SurrogateSpec:
    """What to refit each step: a GP or an NLM variant."""

    kind: str = "gp"  # gp | luna | map | mle
    length_scale: float = 0.2  # GP, on the unit box
    epochs: int = 800
    learning_rate: float = 3e-3
    hidden: tuple[int, ...] = (50, 50, 50)
    n_heads: int = 50
    lam: float = 10.0
    gamma: float = 1e-2
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gp", "luna", "map", "mle"):
            raise ValueError(f"unknown surrogate kind {self.kind!r}")


@dataclass
class BoTrace:
    x: np.ndarray  # (steps, dim), in original coordinates
    f: np.ndarray
    best: np.ndarray
    regret: np.ndarray
    fallback: np.ndarray  # True where the surrogate failed and a random query was used

    def __len__(self) -> int:
        return self.f.shape[0]


def _fit_predict(spec: SurrogateSpec, x01: np.ndarray, y: np.ndarray, cand: np.ndarray, seed: int):
    """Surrogate moments at the candidates; inputs already in the unit box."""
    y_mean, y_std = float(np.mean(y)), float(np.std(y))
    y_std = y_std if y_std > 0 else 1.0
    ys = (y - y_mean) / y_std
    if spec.kind == "gp":
        cfg = gp.KernelConfig(kind="matern52", length_scale=spec.length_scale, amplitude=1.0, white_noise=1e-6)
        pred = gp.gp_fit_predict(cfg, (x01, ys), cand)
        return pred.mean * y_std + y_mean, pred.total_var * y_std**2
    cfg = trainer.TrainConfig(
        objective=spec.kind,
        hidden=spec.hidden,
        epochs=spec.epochs,
        batch_size=min(32, len(ys)),
        learning_rate=spec.learning_rate,
        gamma=spec.gamma,
        lam=spec.lam,
        alpha=spec.alpha,
        sigma2=0.01,  # observations are noiseless; small nugget for conditioning
        n_heads=spec.n_heads,
        seed=seed,
        standardize=False,  # already rescaled here
    )
    ds = GapDataset(
        name="bo",
        train=Split(x01, ys),
        val=Split(x01[:0], ys[:0]),
        test_not_gap=Split(x01[:0], ys[:0]),
        test_gap=Split(x01[:0], ys[:0]),
    )
    model = trainer.train(cfg, ds)
    pred = model.predict(cand)
    return pred.mean * y_std + y_mean, pred.total_var * y_std**2


def optimize(
    spec: SurrogateSpec,
    benchmark: Benchmark,
    budget: int,
    init_count: int | None = None,
    seed: int = 0,
) -> BoTrace:
    """Run the loop for ``budget`` total evaluations (including the random
    initial design of ``init_count`` points)."""
    if init_count is None:
        init_count = DEFAULT_INIT.get(benchmark.name, 5)
    if budget < init_count or init_count < 1:
        raise ValueError("need budget >= init_count >= 1")
    rng = np.random.default_rng([seed, 0xB0])
    width = benchmark.upper - benchmark.lower

    def to01(x):
        return (x - benchmark.lower) / width

    xs = [benchmark.lower + width * rng.random(benchmark.dim) for _ in range(init_count)]
    fs = [benchmark(x) for x in xs]
    fallback = [False] * init_count

    sobol = qmc.Sobol(benchmark.dim, scramble=True, seed=seed)
    for step in range(budget - init_count):
        cand01 = sobol.random(N_SOBOL_CANDIDATES)
        incumbent01 = to01(xs[int(np.argmin(fs))])
        local = incumbent01 + rng.normal(0.0, LOCAL_SD, size=(N_LOCAL_CANDIDATES, benchmark.dim))
        cand01 = np.vstack([cand01, np.clip(local, 0.0, 1.0)])
        try:
            mean, var = _fit_predict(spec, to01(np.asarray(xs)), np.asarray(fs), cand01, seed=seed + 1000 + step)
            ei = expected_improvement(mean, var, best=float(np.min(fs)))
            x_next01 = cand01[int(np.argmax(ei))]
            failed = False
        except Exception:
            x_next01 = rng.random(benchmark.dim)
            failed = True
        x_next = benchmark.lower + width * x_next01
        xs.append(x_next)
        fs.append(benchmark(x_next))
        fallback.append(failed)

    f_arr = np.asarray(fs)
    best = np.minimum.accumulate(f_arr)
    return BoTrace(
        x=np.asarray(xs),
        f=f_arr,
        best=best,
        regret=np.abs(best - benchmark.optimum_value),
        fallback=np.asarray(fallback, dtype=bool),
    )
