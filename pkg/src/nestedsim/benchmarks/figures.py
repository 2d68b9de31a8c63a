"""Data series behind the case-study figures (plotting is left to the caller)."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtri

from .erm import StraddleConfig, outer_density, straddle_true_mu
from .studies import BudgetGrowthReport, MacroStudyReport, VarianceRatioReport


def outer_distribution_series(cfg: StraddleConfig, n_points: int = 400) -> list[dict]:
    """Density of ``S_tau`` and ``mu(S_tau)`` on a grid spanning its 0.05%-99.95% quantiles."""
    lo, hi = (math.exp(cfg.outer_log_mean + cfg.outer_log_sd * ndtri(q)) for q in (5e-4, 1 - 5e-4))
    s = np.linspace(lo, hi, n_points)
    dens = outer_density(cfg, s)
    mu = straddle_true_mu(cfg, s)
    return [{"theta": a, "density": b, "mu": c} for a, b, c in zip(s, dens, mu)]


def _order_stat(values: np.ndarray, q: float, axis: int = 0) -> np.ndarray:
    n = values.shape[axis]
    k = min(max(math.ceil(n * q - 1e-9), 1), n)
    return np.sort(values, axis=axis).take(k - 1, axis=axis)


def confidence_band_series(cfg: StraddleConfig, report: MacroStudyReport, M: int, level: float = 0.95) -> list[dict]:
    """Per-scenario lower/upper quantiles of the estimates across macro runs."""
    theta = report.scenarios[M]
    cols = {"theta": theta, "mu": straddle_true_mu(cfg, theta)}
    a = (1.0 - level) / 2
    for (m, design), est in sorted(report.estimates.items()):
        if m != M or est.shape[1] != theta.size:
            continue
        cols[f"{design}_lo"] = _order_stat(est, a)
        cols[f"{design}_hi"] = _order_stat(est, 1 - a)
    keys = list(cols)
    return [dict(zip(keys, vals)) for vals in zip(*(cols[k] for k in keys))]


def ratio_histogram(report: VarianceRatioReport, bins: int = 30) -> list[dict]:
    counts, edges = np.histogram(report.ratios, bins=bins)
    return [{"bin_left": lo, "bin_right": hi, "count": int(c)} for lo, hi, c in zip(edges[:-1], edges[1:], counts)]


def budget_series(report: BudgetGrowthReport) -> list[dict]:
    return [
        {"M": int(m), "N": int(m), "budget": float(b), "budget_over_M": float(b) / m}
        for m, b in zip(report.M, report.mean_budget)
    ]
