import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nestedsim.design import (
    DesignSolution,
    compute_second_moments,
    solve_design,
    standard_design_solution,
)
from nestedsim.estimators import (
    ReplicationPool,
    RiskFunctional,
    SimulationError,
    ecdf,
    empirical_quantile,
    mc_conditional_means,
    nested_expectation,
    pooled_conditional_means,
    risk_report,
    self_normalized_estimate,
    simulate_pool,
)
from nestedsim.input_models import NormalModel, PoissonModel

import _suites


def _manual_design(alloc, gamma=None):
    alloc = np.asarray(alloc)
    m = alloc.size
    gamma = np.eye(m) if gamma is None else np.asarray(gamma, float)
    return DesignSolution(
        c_star=alloc / max(alloc.sum(), 1),
        target_N=float(alloc.max()),
        delta=0.0,
        N_star=alloc.astype(float),
        integer_allocation=alloc.astype(np.int64),
        gamma=gamma,
    )


def identity_output(x):
    return x[:, 0]


class TestSimulatePool:
    def test_single_populated_scenario(self):
        d = _manual_design([0, 5, 0], gamma=np.tile([0.0, 1.0, 0.0], (3, 1)))
        pool = simulate_pool(NormalModel(1), [[0.0], [1.0], [2.0]], d, identity_output, seed=3)
        assert list(pool.outputs) == [1]
        np.testing.assert_array_equal(pool.sizes(), [0, 5, 0])

    def test_same_seed_identical(self):
        d = _manual_design([4, 2])
        a = simulate_pool(PoissonModel(1), [[2.0], [5.0]], d, identity_output, seed=9)
        b = simulate_pool(PoissonModel(1), [[2.0], [5.0]], d, identity_output, seed=9)
        for j in (0, 1):
            np.testing.assert_array_equal(a.inputs[j], b.inputs[j])
            np.testing.assert_array_equal(a.outputs[j], b.outputs[j])
        c = simulate_pool(PoissonModel(1), [[2.0], [5.0]], d, identity_output, seed=10)
        assert not np.array_equal(a.inputs[0], c.inputs[0])

    def test_pool_sizes(self):
        d = _manual_design([3, 0, 2], gamma=[[1, 0, 0], [0.5, 0, 0.5], [0, 0, 1]])
        pool = simulate_pool(NormalModel(1), [[0.0], [0.5], [1.0]], d, identity_output, seed=1)
        np.testing.assert_array_equal(pool.sizes(), [3, 0, 2])

    def test_streams_independent_of_other_scenarios(self):
        # scenario 1 sees the same draws whatever else is simulated
        a = simulate_pool(NormalModel(1), [[0.0], [1.0]], _manual_design([3, 4]), identity_output, seed=5)
        b = simulate_pool(NormalModel(1), [[0.0], [1.0]], _manual_design([9, 4]), identity_output, seed=5)
        np.testing.assert_array_equal(a.inputs[1], b.inputs[1])

    def test_non_finite_output(self):
        def bad(x):
            out = x[:, 0].copy()
            out[2] = np.nan
            return out

        with pytest.raises(SimulationError, match="scenario 0"):
            simulate_pool(NormalModel(1), [[0.0]], _manual_design([4]), bad, seed=1)

    def test_csv_round_trip(self, tmp_path):
        d = _manual_design([3, 2])
        pool = simulate_pool(PoissonModel(2), [[2.0, 1.0], [5.0, 3.0]], d, lambda x: x.sum(axis=1) * 0.5, seed=2)
        pool.to_csv(tmp_path / "pool.csv")
        clone = ReplicationPool.from_csv(tmp_path / "pool.csv", 2)
        for j in (0, 1):
            np.testing.assert_array_equal(clone.inputs[j], pool.inputs[j])
            np.testing.assert_array_equal(clone.outputs[j], pool.outputs[j])


class TestSelfNormalized:
    def test_equal_weights(self):
        assert self_normalized_estimate([1.0, 2.0, 6.0], [0.3, 0.3, 0.3]) == pytest.approx(3.0)

    def test_single_replication(self):
        assert self_normalized_estimate([4.2], [17.0]) == 4.2

    def test_hand_evaluation(self):
        val = self_normalized_estimate([1.0, 2.0, 3.0], np.log([1.0, 1.0, 4.0]))
        assert val == pytest.approx(2.5, abs=1e-14)

    def test_huge_log_weights(self):
        assert self_normalized_estimate([1.0, 3.0], [1000.0, 1000.0]) == pytest.approx(2.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            self_normalized_estimate([], [])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            self_normalized_estimate([1.0, 2.0], [0.0])

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=30), st.floats(-1e6, 1e6))
    @settings(max_examples=100, deadline=None, derandomize=True)
    def test_constant_output(self, log_weights, c):
        assert self_normalized_estimate([c] * len(log_weights), log_weights) == c


class TestPooledMeans:
    def test_identity_gamma_is_mc_mean(self):
        theta = [[0.0], [1.0], [2.0]]
        d = standard_design_solution(3, 50)
        pool = simulate_pool(NormalModel(1), theta, d, identity_output, seed=4)
        est = pooled_conditional_means(pool, d, NormalModel(1), theta).mu_star
        np.testing.assert_allclose(est, mc_conditional_means(pool), rtol=1e-13)

    def test_identical_scenarios_symmetric(self):
        theta = [[0.5], [0.5]]
        model = NormalModel(1)
        d = solve_design(compute_second_moments(model, theta), 40)
        pool = simulate_pool(model, theta, d, identity_output, seed=6)
        mu = pooled_conditional_means(pool, d, model, theta).mu_star
        assert mu[0] == pytest.approx(mu[1], rel=1e-14)

    def test_constant_output(self):
        result = _suites.constant_output_suite()
        assert result.ok, result.failures

    def test_components(self):
        theta = [[0.0], [0.3]]
        model = NormalModel(1)
        d = solve_design(compute_second_moments(model, theta), 30)
        pool = simulate_pool(model, theta, d, identity_output, seed=1)
        res = pooled_conditional_means(pool, d, model, theta, keep_components=True)
        for i in range(2):
            total = sum(d.gamma[i, j] * v for (t, j), v in res.components.items() if t == i)
            assert total == pytest.approx(res.mu_star[i], rel=1e-12)

    def test_component_is_self_normalized_estimate(self):
        theta = np.array([[0.0], [0.4]])
        model = NormalModel(1)
        d = _manual_design([0, 25], gamma=[[0.0, 1.0], [0.0, 1.0]])
        pool = simulate_pool(model, theta, d, lambda x: x[:, 0] ** 2, seed=8)
        mu = pooled_conditional_means(pool, d, model, theta).mu_star
        lw = model.log_lr(theta[0], theta[1], pool.inputs[1])
        assert mu[0] == pytest.approx(self_normalized_estimate(pool.outputs[1], lw), rel=1e-12)

    def test_missing_replications(self):
        d = _manual_design([3, 3])
        pool = ReplicationPool(2, 1, {0: np.zeros((3, 1))}, {0: np.zeros(3)}, {})
        with pytest.raises(ValueError):
            pooled_conditional_means(pool, d, NormalModel(1), [[0.0], [1.0]])

    def test_converges_to_truth(self):
        model = NormalModel(1)
        m = _suites.TESTBED_MEANS
        d = solve_design(compute_second_moments(model, m[:, None]), 20000)
        pool = simulate_pool(model, m[:, None], d, _suites.testbed_output, seed=3)
        mu = pooled_conditional_means(pool, d, model, m[:, None]).mu_star
        sd = np.sqrt(2.5 * _suites.testbed_output_variance(m) / 20000)
        assert np.all(np.abs(mu - _suites.testbed_mu(m)) < 4 * sd)

    def test_mse_rate(self):
        result = _suites.testbed_rate_suite()
        assert result.ok, result.detail

    def test_variance_matches_delta_method(self):
        # the empirical variance tracks the first-order (delta-method) variance
        est = _suites.testbed_estimates(1000, 400, seed=1)
        ratio = est.var(axis=0, ddof=1).sum() / _suites.testbed_delta_variance(1000).sum()
        assert 0.6 < ratio < 1.2


class TestMcMeans:
    def test_mean(self):
        pool = ReplicationPool(1, 1, {0: np.zeros((3, 1))}, {0: np.array([1.0, 2.0, 3.0])}, {})
        assert mc_conditional_means(pool)[0] == 2.0

    def test_single(self):
        pool = ReplicationPool(1, 1, {0: np.zeros((1, 1))}, {0: np.array([7.5])}, {})
        assert mc_conditional_means(pool)[0] == 7.5

    def test_empty_scenario(self):
        pool = ReplicationPool(2, 1, {0: np.zeros((1, 1))}, {0: np.array([7.5])}, {})
        with pytest.raises(ValueError):
            mc_conditional_means(pool)


class TestRiskFunctionals:
    def test_indicator_forms(self):
        mu = [1.0, 2.0, 3.0]
        assert nested_expectation(mu, RiskFunctional("cdf", 3.0)) == 1.0
        assert nested_expectation(mu, RiskFunctional("exceedance", 3.0)) == 0.0

    def test_hockey(self):
        assert nested_expectation([-1.0, 2.0, 4.0], RiskFunctional("hockey", 0.0)) == pytest.approx(2.0)

    def test_squared(self):
        assert nested_expectation([1.0, -1.0], RiskFunctional("squared", 0.0)) == 1.0

    def test_squared_excess(self):
        assert nested_expectation([1.0, -1.0, 3.0], RiskFunctional("squared_excess", 0.0)) == pytest.approx(10 / 3)

    def test_unknown(self):
        with pytest.raises(ValueError):
            RiskFunctional("cubic", 0.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            nested_expectation([], RiskFunctional("hockey", 0.0))


class TestQuantile:
    def test_median_of_ten(self):
        v = np.arange(10, 0, -1.0)
        assert empirical_quantile(v, 0.5) == 5.0

    def test_index_arithmetic(self):
        assert empirical_quantile([4.0, 1.0, 3.0, 2.0], 0.99) == 4.0

    def test_small_alpha(self):
        v = np.random.default_rng(0).normal(size=100)
        assert empirical_quantile(v, 1e-9) == v.min()

    def test_rounding_guard(self):
        # 100 * 0.07 is 7.000000000000001 in binary
        assert empirical_quantile(np.arange(1.0, 101.0), 0.07) == 7.0

    def test_bad_alpha(self):
        with pytest.raises(ValueError):
            empirical_quantile([1.0], 1.0)

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=60), st.floats(0.001, 0.999))
    @settings(max_examples=200, deadline=None, derandomize=True)
    def test_ecdf_inversion(self, values, alpha):
        q = empirical_quantile(values, alpha)
        assert ecdf(values, q) >= alpha - 1e-12


class TestEcdf:
    def test_below_and_above(self):
        assert ecdf([1.0, 2.0, 3.0], 0.5) == 0.0
        assert ecdf([1.0, 2.0, 3.0], 3.5) == 1.0

    def test_at_sample_point(self):
        assert ecdf([1.0, 2.0, 3.0], 2.0) == pytest.approx(2 / 3)

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=40), st.floats(-120, 120), st.floats(0, 50))
    @settings(max_examples=100, deadline=None, derandomize=True)
    def test_monotone(self, values, xi, step):
        assert ecdf(values, xi) <= ecdf(values, xi + step)


class TestRiskReport:
    def test_constant_estimates(self):
        c, xi = 51.0, 49.0
        r = risk_report([c] * 20, xi, 0.99, extended=True)
        assert r["quantile"] == c
        assert r["exceedance"] == 1.0
        assert r["hockey"] == pytest.approx(2.0)
        assert r["squared"] == pytest.approx(4.0)
        assert r["squared_excess"] == pytest.approx(4.0)

    def test_keys(self):
        assert set(risk_report([1.0, 2.0], 1.5, 0.5)) == {"quantile", "exceedance", "hockey", "squared"}
