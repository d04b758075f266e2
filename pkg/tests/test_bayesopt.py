import numpy as np
import pytest
from scipy.special import ndtr

from luna_nlm import bayesopt as bo


class TestBranin:
    def test_known_minima(self):
        for x in bo.BENCHMARKS["branin"].optima:
            np.testing.assert_allclose(bo.branin(x), 0.397887, atol=1e-4)

    def test_origin_value(self):
        # direct evaluation: (0 - 0 + 0 - 6)^2 + 10 (1 - 1/(8 pi)) cos 0 + 10
        want = 36.0 + 10.0 * (1.0 - 1.0 / (8.0 * np.pi)) + 10.0
        np.testing.assert_allclose(bo.branin(np.zeros(2)), want, atol=1e-12)


class TestHartmann6:
    def test_known_minimum(self):
        np.testing.assert_allclose(
            bo.hartmann6(bo.BENCHMARKS["hartmann6"].optima[0]), -3.32237, atol=1e-3
        )

    def test_origin_direct_evaluation(self):
        a = np.array([1.0, 1.2, 3.0, 3.2])
        mats_a = bo._HARTMANN6_A
        mats_p = bo._HARTMANN6_P
        want = -sum(
            a[i] * np.exp(-np.sum(mats_a[i] * (0.0 - mats_p[i]) ** 2)) for i in range(4)
        )
        np.testing.assert_allclose(bo.hartmann6(np.zeros(6)), want, atol=1e-12)

    def test_nonpositive_on_unit_cube(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            assert bo.hartmann6(rng.random(6)) <= 0.0


class TestExpectedImprovement:
    def test_zero_sd_no_improvement(self):
        np.testing.assert_allclose(
            bo.expected_improvement(np.array([2.0]), np.array([0.0]), best=1.0), [0.0]
        )

    def test_zero_sd_positive_improvement(self):
        np.testing.assert_allclose(
            bo.expected_improvement(np.array([0.5]), np.array([0.0]), best=1.0), [0.5]
        )

    def test_at_best_unit_sd(self):
        got = bo.expected_improvement(np.array([1.0]), np.array([1.0]), best=1.0)
        np.testing.assert_allclose(got, 1.0 / np.sqrt(2 * np.pi), atol=1e-12)

    def test_matches_monte_carlo(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            mu = float(rng.normal())
            sd = float(rng.uniform(0.2, 2.0))
            best = float(rng.normal())
            draws = rng.normal(mu, sd, 1_000_000)
            want = np.mean(np.maximum(best - draws, 0.0))
            got = bo.expected_improvement(np.array([mu]), np.array([sd**2]), best)[0]
            assert abs(got - want) <= 0.01 * max(want, 0.01)

    def test_rejects_negative_variance(self):
        with pytest.raises(ValueError):
            bo.expected_improvement(np.zeros(1), np.array([-1.0]), 0.0)


class TestOptimize:
    def test_budget_equals_init_is_random_search(self):
        bench = bo.BENCHMARKS["branin"]
        trace = bo.optimize(bo.SurrogateSpec(kind="gp"), bench, budget=5, init_count=5, seed=0)
        assert len(trace) == 5
        assert not trace.fallback.any()

    def test_deterministic(self):
        bench = bo.BENCHMARKS["branin"]
        a = bo.optimize(bo.SurrogateSpec(kind="gp"), bench, budget=9, init_count=5, seed=3)
        b = bo.optimize(bo.SurrogateSpec(kind="gp"), bench, budget=9, init_count=5, seed=3)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.f, b.f)

    def test_incumbent_monotone_and_in_box(self):
        bench = bo.BENCHMARKS["branin"]
        trace = bo.optimize(bo.SurrogateSpec(kind="gp"), bench, budget=12, init_count=5, seed=1)
        assert np.all(np.diff(trace.best) <= 0)
        assert np.all(trace.regret >= 0)
        assert np.all(trace.x >= bench.lower) and np.all(trace.x <= bench.upper)

    def test_gp_finds_branin_minimum(self):
        bench = bo.BENCHMARKS["branin"]
        trace = bo.optimize(bo.SurrogateSpec(kind="gp"), bench, budget=50, seed=0)
        assert trace.regret[-1] < 0.05

    def test_invalid_budget(self):
        with pytest.raises(ValueError):
            bo.optimize(bo.SurrogateSpec(), bo.BENCHMARKS["branin"], budget=3, init_count=5)
