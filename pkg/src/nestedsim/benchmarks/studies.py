"""Macro-replication studies comparing the optimal design with its baselines."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from ..design import (
    DesignSolution,
    compute_second_moments,
    solve_design,
    standard_design_solution,
)
from ..estimators import (
    empirical_quantile,
    mc_conditional_means,
    pooled_conditional_means,
    risk_report,
    simulate_pool,
)
from ..rng import DATA, OUTER, REGRESSION, STANDARD, TEST_SET, make_stream
from .baselines import laguerre_features, quadratic_features, regression_baseline, standard_design
from .erm import (
    StraddleConfig,
    erm_oracle,
    sample_outer,
    straddle_model,
    straddle_outer_scenarios,
    straddle_payoff,
)
from .newsvendor import (
    NewsvendorConfig,
    generate_data,
    newsvendor_model,
    newsvendor_output_variance,
    newsvendor_profit,
    newsvendor_true_mu,
    posterior_sample,
)

DESIGNS = ("optimal", "standard", "standard_plus", "regression")
MEASURES = ("quantile", "exceedance", "hockey", "squared")
# Reported alongside the four measures; matches the squared-excess-loss reading.
EXTRA_MEASURES = ("squared_excess",)
LEVELS = (0.90, 0.95, 0.99)

# Salts separating the random streams of the design arms.
_ARM_SALT = {"optimal": 1, "standard": 2, "standard_plus": 3, "regression": 4}


def _map(fn: Callable, items: Iterable, threads: int) -> list:
    items = list(items)
    if threads <= 1:
        return [fn(k) for k in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ERM macro study ---------------------------------------------------------


@dataclass
class MacroStudyReport:
    """MSE decomposition per ``(M, design, measure)``."""

    seed: int
    n_macro: int
    truth: dict[str, float]
    rows: list[dict] = field(default_factory=list)
    budgets: dict[tuple[int, str], int] = field(default_factory=dict)
    estimates: dict[tuple[int, str], np.ndarray] = field(default_factory=dict, repr=False)
    scenarios: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def mse(self, M: int, design: str, measure: str) -> float:
        for row in self.rows:
            if (row["M"], row["design"], row["measure"]) == (M, design, measure):
                return row["mse"]
        raise KeyError((M, design, measure))


@dataclass
class _ErmSetup:
    cfg: StraddleConfig
    M: int
    scenarios: np.ndarray
    design: DesignSolution
    std_M: int
    std_N: int
    std_scenarios: np.ndarray


def _erm_setup(cfg: StraddleConfig, M: int, target_N: int | None) -> _ErmSetup:
    model = straddle_model(cfg)
    theta = straddle_outer_scenarios(cfg, M)
    target = M if target_N is None else target_N
    design = solve_design(compute_second_moments(model, theta), target)
    std_M, std_N = standard_design(design.budget)
    return _ErmSetup(cfg, M, theta, design, std_M, std_N, straddle_outer_scenarios(cfg, std_M))


def _erm_estimates(setup: _ErmSetup, design: str, seed: int, macro: int) -> np.ndarray:
    """Conditional-mean estimates of one design arm in one macro run."""
    cfg, model = setup.cfg, straddle_model(setup.cfg)

    def g(x):
        return straddle_payoff(cfg, x)

    salt = (_ARM_SALT[design], setup.M)
    if design == "optimal":
        pool = simulate_pool(model, setup.scenarios, setup.design, g, seed, macro=macro, salt=salt)
        return pooled_conditional_means(pool, setup.design, model, setup.scenarios).mu_star
    if design == "standard":
        plan = standard_design_solution(setup.std_M, setup.std_N)
        return mc_conditional_means(simulate_pool(model, setup.std_scenarios, plan, g, seed, macro=macro, salt=salt))
    if design == "standard_plus":
        plan = standard_design_solution(setup.M, int(setup.design.target_N))
        return mc_conditional_means(simulate_pool(model, setup.scenarios, plan, g, seed, macro=macro, salt=salt))
    if design == "regression":
        stream = make_stream(seed, macro, REGRESSION, salt)
        points = sample_outer(cfg, setup.design.budget, stream)
        outputs = g(model.sample_each(points[:, None], stream))
        return regression_baseline(points, outputs, lambda s: laguerre_features(s, cfg.S0), setup.scenarios)
    raise ValueError(f"unknown design {design!r}")


def _design_budget(setup: _ErmSetup, design: str) -> int:
    if design == "standard_plus":
        return setup.M * int(setup.design.target_N)
    if design == "standard":
        return setup.std_M * setup.std_N
    return setup.design.budget


def run_macro_study(
    problem: StraddleConfig,
    designs: Sequence[str] = DESIGNS,
    n_macro: int = 200,
    seed: int = 0,
    *,
    M_list: Sequence[int] | None = None,
    target_N: int | None = None,
    oracle_draws: int = 10**6,
    threads: int = 1,
    keep_estimates: bool = False,
) -> MacroStudyReport:
    """MSE of the four tail statistics for each design over ``n_macro`` runs.

    Outer scenarios are the fixed quantile grid of size ``M``; the target
    inner precision defaults to ``N = M``.  Only inner replications (and
    the regression's design points) are redrawn across macro runs.
    """
    if n_macro < 2:
        raise ValueError("n_macro must be >= 2")
    for d in designs:
        if d not in DESIGNS:
            raise ValueError(f"unknown design {d!r}")
    truth = erm_oracle(problem, oracle_draws, seed)
    report = MacroStudyReport(seed, n_macro, truth)
    for M in M_list or [problem.M]:
        setup = _erm_setup(problem, int(M), target_N)
        report.scenarios[setup.M] = setup.scenarios

        def one_run(k: int) -> dict[str, tuple[dict, np.ndarray]]:
            out = {}
            for d in designs:
                mu = _erm_estimates(setup, d, seed, k)
                out[d] = (risk_report(mu, problem.xi, problem.alpha, extended=True), mu)
            return out

        runs = _map(one_run, range(n_macro), threads)
        for d in designs:
            report.budgets[(setup.M, d)] = _design_budget(setup, d)
            if keep_estimates:
                report.estimates[(setup.M, d)] = np.stack([r[d][1] for r in runs])
            for measure in MEASURES + EXTRA_MEASURES:
                est = np.array([r[d][0][measure] for r in runs])
                err = est - truth[measure]
                bias2 = float(np.mean(err)) ** 2
                var = float(np.var(est))
                report.rows.append(
                    {
                        "M": setup.M,
                        "design": d,
                        "measure": measure,
                        "mse": float(np.mean(err**2)),
                        "bias2": bias2,
                        "variance": var,
                        "truth": truth[measure],
                        "budget": report.budgets[(setup.M, d)],
                        "n_macro": n_macro,
                        "seed": seed,
                    }
                )
    return report


# Newsvendor coverage study ------------------------------------------------


@dataclass
class CrIReport:
    """Coverage and width of credible intervals per design and level."""

    seed: int
    n_macro: int
    levels: tuple[float, ...]
    coverage: dict[tuple[str, float], np.ndarray]
    width: dict[tuple[str, float], np.ndarray]
    budgets: np.ndarray

    def mean_coverage(self, design: str, level: float) -> float:
        return float(self.coverage[(design, level)].mean())

    def mean_width(self, design: str, level: float) -> float:
        return float(self.width[(design, level)].mean())

    def rows(self) -> list[dict]:
        out = []
        designs = sorted({d for d, _ in self.coverage}, key=lambda d: COVERAGE_DESIGNS.index(d))
        for d in designs:
            for lv in self.levels:
                cov, wid = self.coverage[(d, lv)], self.width[(d, lv)]
                out.append(
                    {
                        "design": d,
                        "level": lv,
                        "coverage": float(cov.mean()),
                        "coverage_se": float(cov.std(ddof=1) / np.sqrt(cov.size)),
                        "width": float(wid.mean()),
                        "width_se": float(wid.std(ddof=1) / np.sqrt(wid.size)),
                        "n_macro": self.n_macro,
                        "seed": self.seed,
                    }
                )
        return out


COVERAGE_DESIGNS = ("oracle", "optimal", "standard", "standard_plus", "regression")


def credible_interval(mu, level: float) -> tuple[float, float]:
    a = 1.0 - level
    return empirical_quantile(mu, a / 2), empirical_quantile(mu, 1 - a / 2)


def coverage_study(
    cfg: NewsvendorConfig,
    designs: Sequence[str] = ("oracle", "optimal", "standard", "regression"),
    n_macro: int = 200,
    test_size: int = 10**5,
    seed: int = 0,
    *,
    levels: Sequence[float] = LEVELS,
    threads: int = 1,
) -> CrIReport:
    """Credible-interval coverage for the expected profit over ``n_macro`` runs.

    Each run draws fresh demand data, updates the posterior and draws the
    ``M`` outer scenarios shared by the oracle, optimal and regression
    designs, plus a test set of analytic conditional means used to score
    every design in that run.
    """
    if n_macro < 2:
        raise ValueError("n_macro must be >= 2")
    for d in designs:
        if d not in COVERAGE_DESIGNS:
            raise ValueError(f"unknown design {d!r}")
    model = newsvendor_model(cfg)
    levels = tuple(float(lv) for lv in levels)

    def g(x):
        return newsvendor_profit(cfg, x)

    def one_run(k: int):
        data = generate_data(cfg, make_stream(seed, k, DATA))
        theta = posterior_sample(cfg, data, cfg.M, make_stream(seed, k, OUTER))
        test_mu = np.sort(newsvendor_true_mu(cfg, posterior_sample(cfg, data, test_size, make_stream(seed, k, TEST_SET))))
        design = solve_design(compute_second_moments(model, theta), cfg.N)
        budget = design.budget
        mus = {}
        for d in designs:
            salt = _ARM_SALT.get(d, 0)
            if d == "oracle":
                mus[d] = newsvendor_true_mu(cfg, theta)
            elif d == "optimal":
                pool = simulate_pool(model, theta, design, g, seed, macro=k, salt=salt)
                mus[d] = pooled_conditional_means(pool, design, model, theta).mu_star
            elif d == "standard":
                std_M, std_N = standard_design(budget)
                std_theta = posterior_sample(cfg, data, std_M, make_stream(seed, k, STANDARD))
                plan = standard_design_solution(std_M, std_N)
                mus[d] = mc_conditional_means(simulate_pool(model, std_theta, plan, g, seed, macro=k, salt=salt))
            elif d == "standard_plus":
                plan = standard_design_solution(cfg.M, cfg.N)
                mus[d] = mc_conditional_means(simulate_pool(model, theta, plan, g, seed, macro=k, salt=salt))
            elif d == "regression":
                stream = make_stream(seed, k, REGRESSION)
                points = posterior_sample(cfg, data, budget, stream)
                outputs = g(model.sample_each(points, stream))
                mus[d] = regression_baseline(points, outputs, quadratic_features, theta)
        result = {}
        for d, mu in mus.items():
            for lv in levels:
                lo, hi = credible_interval(mu, lv)
                inside = np.searchsorted(test_mu, hi, side="right") - np.searchsorted(test_mu, lo, side="left")
                result[(d, lv)] = (inside / test_mu.size, hi - lo)
        return result, budget

    runs = _map(one_run, range(n_macro), threads)
    coverage = {key: np.array([r[0][key][0] for r in runs]) for key in runs[0][0]}
    width = {key: np.array([r[0][key][1] for r in runs]) for key in runs[0][0]}
    budgets = np.array([r[1] for r in runs])
    return CrIReport(seed, n_macro, levels, coverage, width, budgets)


# Variance-ratio diagnostic -----------------------------------------------


@dataclass
class VarianceRatioReport:
    ratios: np.ndarray
    pooled_variance: np.ndarray
    mc_variance: np.ndarray
    budget: int
    n_macro: int
    seed: int

    @property
    def mean(self) -> float:
        return float(self.ratios.mean())

    @property
    def max(self) -> float:
        return float(self.ratios.max())


def variance_ratio_diagnostic(
    cfg: NewsvendorConfig,
    M: int | None = None,
    N: int | None = None,
    n_macro: int = 200,
    seed: int = 0,
    *,
    simulate_mc: bool = False,
    pooled_design: str = "optimal",
    threads: int = 1,
) -> VarianceRatioReport:
    """Per-scenario ratio ``V[MC estimate with N replications] / V[pooled estimate]``.

    The scenario set is fixed across macro runs.  By default the MC
    variance is the exact ``Var_theta[g] / N``; ``simulate_mc`` estimates
    it from ``n_macro`` standard runs instead.  ``pooled_design="standard"``
    replaces the optimal design by the no-pooling design (a control whose
    ratios should be near one).
    """
    if n_macro < 2:
        raise ValueError("n_macro must be >= 2")
    M = cfg.M if M is None else int(M)
    N = cfg.N if N is None else int(N)
    model = newsvendor_model(cfg)
    data = generate_data(cfg, make_stream(seed, 0, DATA))
    theta = posterior_sample(cfg, data, M, make_stream(seed, 0, OUTER))
    if pooled_design == "optimal":
        design = solve_design(compute_second_moments(model, theta), N)
    elif pooled_design == "standard":
        design = standard_design_solution(M, N)
    else:
        raise ValueError(f"unknown design {pooled_design!r}")

    def g(x):
        return newsvendor_profit(cfg, x)

    def pooled_run(k: int) -> np.ndarray:
        pool = simulate_pool(model, theta, design, g, seed, macro=k, salt=_ARM_SALT["optimal"])
        return pooled_conditional_means(pool, design, model, theta).mu_star

    pooled = np.stack(_map(pooled_run, range(n_macro), threads))
    pooled_var = pooled.var(axis=0, ddof=1)
    if simulate_mc:
        plan = standard_design_solution(M, N)

        def mc_run(k: int) -> np.ndarray:
            pool = simulate_pool(model, theta, plan, g, seed, macro=k, salt=_ARM_SALT["standard_plus"])
            return mc_conditional_means(pool)

        mc_var = np.stack(_map(mc_run, range(n_macro), threads)).var(axis=0, ddof=1)
    else:
        mc_var = newsvendor_output_variance(cfg, theta) / N
    return VarianceRatioReport(mc_var / pooled_var, pooled_var, mc_var, design.budget, n_macro, seed)


# Budget growth ------------------------------------------------------------


@dataclass
class BudgetGrowthReport:
    M: np.ndarray
    budgets: np.ndarray  # (len(M), n_macro)
    seed: int

    @property
    def mean_budget(self) -> np.ndarray:
        return self.budgets.mean(axis=1)

    @property
    def slope(self) -> float:
        """Least-squares slope of ``log Gamma`` on ``log M``."""
        if self.M.size < 2:
            return float("nan")
        return float(np.polyfit(np.log(self.M), np.log(self.mean_budget), 1)[0])


def budget_growth_study(
    cfg: NewsvendorConfig, M_list: Sequence[int], seed: int = 0, *, n_macro: int = 1, threads: int = 1
) -> BudgetGrowthReport:
    """Minimized budget with ``N = M`` for each ``M``, averaged over ``n_macro`` posteriors."""
    M_arr = np.asarray([int(m) for m in M_list])
    if np.any(M_arr < 1) or np.any(np.diff(M_arr) <= 0):
        raise ValueError("M_list must be positive and increasing")
    model = newsvendor_model(cfg)

    def one(job: tuple[int, int]) -> int:
        M, k = job
        data = generate_data(cfg, make_stream(seed, k, DATA))
        theta = posterior_sample(cfg, data, M, make_stream(seed, k, OUTER, salt=M))
        return solve_design(compute_second_moments(model, theta), M).budget

    jobs = [(int(M), k) for M in M_arr for k in range(n_macro)]
    budgets = np.array(_map(one, jobs, threads), dtype=np.int64).reshape(M_arr.size, n_macro)
    return BudgetGrowthReport(M_arr, budgets, seed)
