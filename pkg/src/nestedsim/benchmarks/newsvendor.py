"""Multi-product newsvendor under Bayesian input uncertainty.

Demand for product ``l`` is Poisson with unknown rate.  Each rate gets a
conjugate Gamma prior, updated with simulated real-world data; outer
scenarios are draws from the joint posterior.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import gammaln

from ..input_models import PoissonModel, poisson_draws


@dataclass(frozen=True)
class NewsvendorConfig:
    L: int = 10
    price_base: float = 10.0
    price_step: float = 0.3
    cost: float = 2.0
    stock_base: int = 9
    rate_base: float = 5.0
    data_base: int = 50
    data_step: int = 5
    prior_shape: float = 0.001
    prior_rate: float = 0.001
    M: int = 1000
    N: int = 1000

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("need at least one product")
        if np.any(self.prices <= 0) or np.any(self.stocks <= 0) or np.any(self.true_rates <= 0):
            raise ValueError("prices, stocks and rates must be positive")

    @property
    def products(self) -> np.ndarray:
        return np.arange(1, self.L + 1)

    @property
    def prices(self) -> np.ndarray:
        return self.price_base + self.price_step * self.products

    @property
    def costs(self) -> np.ndarray:
        return np.full(self.L, float(self.cost))

    @property
    def stocks(self) -> np.ndarray:
        return self.stock_base + self.products

    @property
    def true_rates(self) -> np.ndarray:
        return self.rate_base + self.products.astype(float)

    @property
    def data_sizes(self) -> np.ndarray:
        return self.data_base + self.data_step * self.products

    def to_dict(self) -> dict:
        return asdict(self)


def newsvendor_model(cfg: NewsvendorConfig) -> PoissonModel:
    return PoissonModel(cfg.L)


def newsvendor_profit(cfg: NewsvendorConfig, x) -> np.ndarray:
    """Total profit ``sum_l p_l min(x_l, k_l) - c_l k_l`` for demand rows ``x``."""
    x = np.asarray(x, dtype=float)
    sold = np.minimum(x, cfg.stocks)
    return sold @ cfg.prices - float(cfg.costs @ cfg.stocks)


def _truncated_moments(cfg: NewsvendorConfig, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``E[min(X, k)]`` and ``E[min(X, k)^2]`` per product for rates ``theta``."""
    k = cfg.stocks
    grid = np.arange(int(k.max()))
    lam = theta[..., None]
    with np.errstate(divide="ignore"):
        log_pmf = grid * np.log(lam) - lam - gammaln(grid + 1.0)
    pmf = np.where(grid < k[:, None], np.exp(log_pmf), 0.0)
    below = pmf.sum(axis=-1)
    gap = np.clip(k[:, None] - grid, 0, None)
    first = k - (pmf * gap).sum(axis=-1)
    second = (pmf * grid**2).sum(axis=-1) + k**2 * (1.0 - below)
    return first, second


def newsvendor_true_mu(cfg: NewsvendorConfig, theta) -> np.ndarray:
    """Expected profit for rate vectors ``theta`` with shape ``(..., L)``."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < 0):
        raise ValueError("rates must be nonnegative")
    first, _ = _truncated_moments(cfg, theta)
    return first @ cfg.prices - float(cfg.costs @ cfg.stocks)


def newsvendor_output_variance(cfg: NewsvendorConfig, theta) -> np.ndarray:
    """``Var_theta[g(X)]``; products are independent so variances add."""
    theta = np.asarray(theta, dtype=float)
    first, second = _truncated_moments(cfg, theta)
    return (second - first**2) @ cfg.prices**2


def generate_data(cfg: NewsvendorConfig, stream: np.random.Generator) -> list[np.ndarray]:
    """Real-world demand observations at the true rates, ``n_l`` per product."""
    return [
        poisson_draws(np.full(int(n), lam), stream).astype(np.int64)
        for n, lam in zip(cfg.data_sizes, cfg.true_rates)
    ]


def posterior_params(cfg: NewsvendorConfig, data) -> tuple[np.ndarray, np.ndarray]:
    """Gamma posterior shape and rate per product."""
    if len(data) != cfg.L:
        raise ValueError(f"expected data for {cfg.L} products")
    totals = np.array([np.sum(d) for d in data], dtype=float)
    counts = np.array([np.size(d) for d in data], dtype=float)
    return cfg.prior_shape + totals, cfg.prior_rate + counts


def posterior_sample(cfg: NewsvendorConfig, data, M: int, stream: np.random.Generator) -> np.ndarray:
    """``M`` rate vectors from the independent Gamma posteriors: ``(M, L)``."""
    shape, rate = posterior_params(cfg, data)
    return stream.gamma(shape, 1.0 / rate, size=(int(M), cfg.L))
