#!/usr/bin/env python3
"""Benchmark the compiled MLP kernels against the NumPy fallback.

Times the raw forward/backward kernels at the batch shapes the trainer
actually uses, plus one full diversity-objective training step. Run after
building the extension:

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from luna_nlm import nn, objectives
from luna_nlm._kernels import BACKEND, _numpy
from luna_nlm.objectives import LunaParams, PerturbationConfig

try:
    from luna_nlm._kernels import _mlp
except ImportError:
    _mlp = None


def timeit(fn, repeats=2000):
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench_kernels():
    rng = np.random.default_rng(0)
    shapes = [
        ("cubic trainer step", [1, 50, 20], 64),
        ("bayesopt surrogate", [2, 50, 50, 50], 150),
        ("wide batch", [8, 50, 20], 512),
    ]
    print(f"selected backend: {BACKEND}")
    print(f"{'case':24s} {'kernel':9s} {'numpy':>10s} {'cython':>10s} {'speedup':>8s}")
    for label, sizes, batch in shapes:
        ws = [rng.normal(size=(fo, fi)) for fi, fo in zip(sizes[:-1], sizes[1:])]
        bs = [rng.normal(size=fo) for fo in sizes[1:]]
        x = rng.normal(size=(batch, sizes[0]))
        cot = rng.normal(size=(batch, sizes[-1]))
        acts, pres = _numpy.mlp_forward(ws, bs, 0, x)

        t_np_f = timeit(lambda: _numpy.mlp_forward(ws, bs, 0, x))
        t_np_b = timeit(lambda: _numpy.mlp_backward(ws, 0, acts, pres, cot))
        if _mlp is not None:
            t_cy_f = timeit(lambda: _mlp.mlp_forward(ws, bs, 0, x))
            t_cy_b = timeit(lambda: _mlp.mlp_backward(ws, 0, acts, pres, cot))
        else:
            t_cy_f = t_cy_b = float("nan")
        print(f"{label:24s} {'forward':9s} {t_np_f * 1e6:9.1f}u {t_cy_f * 1e6:9.1f}u {t_np_f / t_cy_f:7.2f}x")
        print(f"{label:24s} {'backward':9s} {t_np_b * 1e6:9.1f}u {t_cy_b * 1e6:9.1f}u {t_np_b / t_cy_b:7.2f}x")


def bench_objective_step():
    import os

    rng = np.random.default_rng(1)
    trunk = nn.init_params([1, 50, 20], "relu", rng)
    psi = LunaParams(trunk, rng.normal(size=(20, 21)))
    x = rng.normal(size=(32, 1))
    y = rng.normal(size=32)
    perturb = PerturbationConfig(1e-2, 0)
    delta = perturb.sample(32, 1)

    def step():
        objectives.luna_loss(psi, (x, y), 0.01, 1.0, 0.5, perturb, delta=delta)

    t = timeit(step, repeats=500)
    print(f"\nfull diversity-objective step (backend={BACKEND}): {t * 1e6:.0f}us")
    print("re-run with LUNA_NLM_FORCE_NUMPY=1 to time the fallback end to end")


if __name__ == "__main__":
    bench_kernels()
    bench_objective_step()
