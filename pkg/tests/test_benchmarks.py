import math

import numpy as np
import pytest
from scipy import stats

from nestedsim.benchmarks import figures
from nestedsim.benchmarks.baselines import (
    RankDeficientError,
    laguerre_features,
    quadratic_features,
    regression_baseline,
    standard_design,
)
from nestedsim.benchmarks.erm import (
    StraddleConfig,
    erm_oracle,
    outer_density,
    straddle_call_put,
    straddle_model,
    straddle_outer_scenarios,
    straddle_payoff,
    straddle_true_mu,
)
from nestedsim.benchmarks.newsvendor import (
    NewsvendorConfig,
    generate_data,
    newsvendor_model,
    newsvendor_profit,
    newsvendor_true_mu,
    posterior_params,
    posterior_sample,
)
from nestedsim.benchmarks.studies import (
    budget_growth_study,
    coverage_study,
    credible_interval,
    run_macro_study,
    variance_ratio_diagnostic,
)
from nestedsim.design import as_scenario_matrix, compute_second_moments, solve_design
from nestedsim.rng import make_stream

CFG = StraddleConfig()
NV = NewsvendorConfig()


class TestStraddle:
    def test_deep_in_the_money_put(self):
        val = straddle_true_mu(CFG, [1e-8])[0]
        assert val == pytest.approx(CFG.K * math.exp(-CFG.r * (CFG.T - CFG.tau)), rel=1e-9)

    @pytest.mark.parametrize("s", [20.0, 95.0, 110.0, 180.0, 400.0])
    def test_put_call_parity(self, s):
        call, put = straddle_call_put(CFG, [s])
        assert call[0] - put[0] == pytest.approx(s - CFG.K * math.exp(-CFG.r * (CFG.T - CFG.tau)), abs=1e-10)

    def test_mc_oracle_at_100(self):
        model = straddle_model(CFG)
        n = 10**7
        x = model.sample([100.0], n, make_stream(31))
        pay = straddle_payoff(CFG, x)
        se = pay.std() / math.sqrt(n)
        assert abs(pay.mean() - straddle_true_mu(CFG, [100.0])[0]) < 3 * se

    def test_convex(self):
        s = straddle_outer_scenarios(CFG)
        mu = straddle_true_mu(CFG, s)
        # divided second differences on the non-uniform grid
        d1 = np.diff(mu) / np.diff(s)
        assert np.all(np.diff(d1) >= -1e-6)
        m = s[np.argmin(mu)]
        assert abs(m - CFG.K * math.exp(-CFG.r * (CFG.T - CFG.tau))) < 10.0

    def test_median_scenario(self):
        s = straddle_outer_scenarios(CFG, 999)
        assert s[499] == pytest.approx(100 * math.exp((0.02 - 0.045) * 0.25), rel=1e-12)
        assert s[499] == pytest.approx(99.377, abs=1e-3)

    def test_scenarios_increasing_and_extremes(self):
        s = straddle_outer_scenarios(CFG)
        assert np.all(np.diff(s) > 0)
        dist = stats.lognorm(s=CFG.outer_log_sd, scale=math.exp(CFG.outer_log_mean))
        assert dist.cdf(s[0]) == pytest.approx(0.001, abs=2e-6)
        assert dist.cdf(s[-1]) == pytest.approx(0.999, abs=2e-6)

    def test_outer_density(self):
        dist = stats.lognorm(s=CFG.outer_log_sd, scale=math.exp(CFG.outer_log_mean))
        s = np.array([60.0, 100.0, 150.0])
        np.testing.assert_allclose(outer_density(CFG, s), dist.pdf(s), rtol=1e-12)

    def test_oracle_quantile(self):
        truth = erm_oracle(CFG, 10**6, seed=0)
        assert 47.5 < truth["quantile"] < 49.5
        assert 0.005 < truth["exceedance"] < 0.012

    def test_budget_default_formula(self):
        model = straddle_model(CFG)
        theta = as_scenario_matrix(model, straddle_outer_scenarios(CFG))
        d = solve_design(compute_second_moments(model, theta), 1000)
        assert d.budget == 2148
        support = straddle_outer_scenarios(CFG)[d.sampling_scenarios]
        assert support.size == 4
        assert np.all(((support > 69) & (support < 72)) | ((support > 139) & (support < 143)))
        split = d.integer_allocation[d.sampling_scenarios] / d.budget
        np.testing.assert_allclose(split, [0.29, 0.21, 0.21, 0.29], atol=0.01)


class TestNewsvendor:
    def test_saturation_profit(self):
        x = NV.stocks[None, :] + 3
        assert newsvendor_profit(NV, x)[0] == pytest.approx(float((NV.prices - NV.costs) @ NV.stocks))

    def test_zero_demand(self):
        assert newsvendor_profit(NV, np.zeros((1, NV.L)))[0] == pytest.approx(-290.0)

    def test_single_product(self):
        cfg = NewsvendorConfig(L=1)
        assert newsvendor_profit(cfg, [[5]])[0] == pytest.approx(31.5)

    def test_true_mu_limits(self):
        assert newsvendor_true_mu(NV, np.full((1, NV.L), 1e-9))[0] == pytest.approx(-290.0, abs=1e-6)
        sat = float((NV.prices - NV.costs) @ NV.stocks)
        assert newsvendor_true_mu(NV, np.full((1, NV.L), 500.0))[0] == pytest.approx(sat, rel=1e-9)

    def test_true_mu_mc(self):
        model = newsvendor_model(NV)
        n = 10**6
        x = model.sample(NV.true_rates, n, make_stream(12))
        prof = newsvendor_profit(NV, x)
        assert abs(prof.mean() - newsvendor_true_mu(NV, NV.true_rates[None, :])[0]) < 3 * prof.std() / math.sqrt(n)

    def test_true_mu_increasing_saturating(self):
        grid = np.linspace(0.5, 60, 80)
        for coord in (0, 9):
            theta = np.tile(NV.true_rates, (grid.size, 1))
            theta[:, coord] = grid
            mu = newsvendor_true_mu(NV, theta)
            assert np.all(np.diff(mu) >= -1e-9)
            assert np.all(np.diff(mu, 2) <= 1e-9)

    def test_posterior_no_data(self):
        shape, rate = posterior_params(NV, [np.array([], dtype=int)] * NV.L)
        np.testing.assert_array_equal(shape, NV.prior_shape)
        np.testing.assert_array_equal(rate, NV.prior_rate)

    def test_posterior_conjugate_mean(self):
        data = [np.full(55, 6)] + [np.zeros(1, dtype=int)] * (NV.L - 1)
        shape, rate = posterior_params(NV, data)
        assert shape[0] / rate[0] == pytest.approx(330.001 / 55.001, rel=1e-14)
        draws = posterior_sample(NV, data, 200_000, make_stream(2))
        assert draws[:, 0].mean() == pytest.approx(330.001 / 55.001, rel=3e-3)

    def test_generated_data_sizes(self):
        data = generate_data(NV, make_stream(0))
        assert [d.size for d in data] == list(range(55, 105, 5))
        shape, rate = posterior_params(NV, data)
        np.testing.assert_allclose(rate, 0.001 + np.arange(55, 105, 5))


class TestBaselines:
    @pytest.mark.parametrize("budget, expected", [(1000, (100, 10)), (2148, (167, 13)), (1, (1, 1)), (8, (4, 2))])
    def test_standard_design(self, budget, expected):
        assert standard_design(budget) == expected

    def test_regression_constant(self):
        pts = np.linspace(50, 150, 40)
        pred = regression_baseline(pts, np.full(40, 3.5), lambda s: laguerre_features(s, 100.0), [60.0, 140.0])
        np.testing.assert_allclose(pred, 3.5, atol=1e-10)

    def test_regression_linear_exact(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(0, 5, (30, 3))
        y = 1.0 + pts @ [2.0, -1.0, 0.5]
        new = rng.uniform(0, 5, (6, 3))
        pred = regression_baseline(pts, y, quadratic_features, new)
        np.testing.assert_allclose(pred, 1.0 + new @ [2.0, -1.0, 0.5], atol=1e-8)

    def test_rank_deficient(self):
        with pytest.raises(RankDeficientError):
            regression_baseline(np.ones(3), np.arange(3.0), lambda s: laguerre_features(s, 1.0), [1.0])

    def test_feature_shapes(self):
        assert laguerre_features(np.arange(5.0), 100.0).shape == (5, 5)
        assert quadratic_features(np.ones((4, 10))).shape == (4, 21)

    def test_erm_regression_near_reference_values(self):
        # reference regression MSEs at M = 512, squared measure taken as the squared excess
        reference = {"quantile": 36.0, "exceedance": 1.34e-4, "hockey": 1.53e-2, "squared_excess": 9.05}
        report = run_macro_study(CFG, designs=("regression",), n_macro=200, seed=0, M_list=[512])
        for measure, value in reference.items():
            assert value / 3 <= report.mse(512, "regression", measure) <= 3 * value


class TestStudies:
    def test_macro_smoke(self):
        report = run_macro_study(CFG, n_macro=2, seed=0, M_list=[64], oracle_draws=10**4)
        assert all(math.isfinite(row["mse"]) for row in report.rows)
        assert {row["design"] for row in report.rows} == {"optimal", "standard", "standard_plus", "regression"}

    def test_macro_deterministic(self):
        a = run_macro_study(CFG, designs=("optimal",), n_macro=3, seed=4, M_list=[64], oracle_draws=10**4)
        b = run_macro_study(CFG, designs=("optimal",), n_macro=3, seed=4, M_list=[64], oracle_draws=10**4)
        assert a.rows == b.rows

    def test_threads_agree(self):
        a = run_macro_study(CFG, designs=("optimal",), n_macro=4, seed=2, M_list=[64], oracle_draws=10**4)
        b = run_macro_study(CFG, designs=("optimal",), n_macro=4, seed=2, M_list=[64], oracle_draws=10**4, threads=3)
        assert a.rows == b.rows

    def test_oracle_on_oracle(self):
        from nestedsim.benchmarks.erm import sample_outer
        from nestedsim.estimators import risk_report
        from nestedsim.rng import ORACLE

        truth = erm_oracle(CFG, 10**5, seed=3)
        exact = straddle_true_mu(CFG, sample_outer(CFG, 10**5, make_stream(3, 0, ORACLE)))
        est = risk_report(exact, CFG.xi, CFG.alpha, extended=True)
        for key, value in truth.items():
            assert (est[key] - value) ** 2 == 0.0

    def test_optimal_beats_standard(self):
        report = run_macro_study(CFG, designs=("optimal", "standard"), n_macro=20, seed=1, M_list=[256])
        for measure in ("quantile", "exceedance", "hockey", "squared"):
            assert report.mse(256, "optimal", measure) < report.mse(256, "standard", measure)

    def test_credible_interval(self):
        lo, hi = credible_interval(np.arange(1.0, 101.0), 0.90)
        assert (lo, hi) == (5.0, 95.0)

    def test_coverage_small(self):
        cfg = NewsvendorConfig(M=200, N=200)
        report = coverage_study(cfg, n_macro=3, test_size=2000, seed=0)
        for (design, level) in report.coverage:
            assert 0.0 <= report.mean_coverage(design, level) <= 1.0
        assert report.mean_width("standard", 0.95) > report.mean_width("oracle", 0.95)
        # optimal-design width within 10% of the oracle width
        for level in report.levels:
            assert report.mean_width("optimal", level) == pytest.approx(report.mean_width("oracle", level), rel=0.1)

    def test_variance_ratio_identity_design(self):
        report = variance_ratio_diagnostic(NV, M=100, N=100, n_macro=200, seed=0, pooled_design="standard")
        assert abs(report.mean - 1.0) < 0.1

    def test_variance_ratio_rejects_single_run(self):
        with pytest.raises(ValueError):
            variance_ratio_diagnostic(NV, n_macro=1)

    def test_budget_growth_trivial(self):
        assert budget_growth_study(NV, [1], 0).budgets[0, 0] == 1

    def test_budget_growth_doubling(self):
        report = budget_growth_study(NV, [1000, 2000], 0)
        factor = report.mean_budget[1] / report.mean_budget[0]
        assert 1.8 <= factor <= 2.4

    def test_budget_growth_validation(self):
        with pytest.raises(ValueError):
            budget_growth_study(NV, [200, 100], 0)


class TestFigureSeries:
    def test_outer_distribution(self):
        rows = figures.outer_distribution_series(CFG, 50)
        assert len(rows) == 50
        assert all(r["density"] > 0 for r in rows)

    def test_confidence_bands(self):
        report = run_macro_study(
            CFG, designs=("optimal",), n_macro=10, seed=0, M_list=[32], oracle_draws=10**4, keep_estimates=True
        )
        rows = figures.confidence_band_series(CFG, report, 32)
        assert len(rows) == 32
        assert all(r["optimal_lo"] <= r["optimal_hi"] for r in rows)

    def test_budget_series(self):
        report = budget_growth_study(NV, [50, 100], 0)
        rows = figures.budget_series(report)
        assert [r["M"] for r in rows] == [50, 100]
