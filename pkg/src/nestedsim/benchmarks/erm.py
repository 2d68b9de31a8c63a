"""Straddle-option risk problem.

Outer scenarios are the stock price ``S_tau`` at the risk horizon under
the real-world measure.  Inner replications draw ``S_T`` under the
risk-neutral measure and pay the discounted straddle payoff.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from ..estimators import risk_report
from ..input_models import LognormalModel, standard_normals
from ..rng import ORACLE, make_stream


@dataclass(frozen=True)
class StraddleConfig:
    S0: float = 100.0
    eta: float = 0.02
    sigma: float = 0.30
    r: float = 0.02
    T: float = 2.0
    K: float = 110.0
    tau: float = 0.25
    M: int = 1000
    paper_compat: bool = False
    alpha: float = 0.99
    xi: float = 49.0

    def __post_init__(self):
        if not 0 < self.tau < self.T:
            raise ValueError("need 0 < tau < T")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.S0 <= 0 or self.K <= 0:
            raise ValueError("S0 and K must be positive")

    @property
    def tenor(self) -> float:
        return self.T - self.tau

    @property
    def discount(self) -> float:
        return math.exp(-self.r * self.tenor)

    @property
    def outer_log_mean(self) -> float:
        return math.log(self.S0) + (self.eta - 0.5 * self.sigma**2) * self.tau

    @property
    def outer_log_sd(self) -> float:
        return self.sigma * math.sqrt(self.tau)

    def to_dict(self) -> dict:
        return asdict(self)


def straddle_model(cfg: StraddleConfig) -> LognormalModel:
    """Inner model: ``ln S_T`` normal with mean ``ln S_tau + (r - sigma^2/2)(T - tau)``.

    With ``paper_compat`` the second-moment closed form uses ``sigma^2``
    instead of ``sigma^2 (T - tau)``.
    """
    return LognormalModel(
        dim=1,
        logvar=cfg.sigma**2 * cfg.tenor,
        offset=(cfg.r - 0.5 * cfg.sigma**2) * cfg.tenor,
        compat_variance=cfg.sigma**2 if cfg.paper_compat else None,
    )


def straddle_payoff(cfg: StraddleConfig, x: np.ndarray) -> np.ndarray:
    """Discounted straddle payoff of terminal prices ``x`` with shape ``(n, 1)``."""
    s_T = np.asarray(x, dtype=float)[..., 0]
    return cfg.discount * np.abs(s_T - cfg.K)


def straddle_call_put(cfg: StraddleConfig, s_tau) -> tuple[np.ndarray, np.ndarray]:
    """Black-Scholes call and put values at spot ``s_tau`` with tenor ``T - tau``."""
    s = np.asarray(s_tau, dtype=float)
    if np.any(s <= 0):
        raise ValueError("spot must be positive")
    vol = cfg.sigma * math.sqrt(cfg.tenor)
    d1 = (np.log(s / cfg.K) + (cfg.r + 0.5 * cfg.sigma**2) * cfg.tenor) / vol
    d2 = d1 - vol
    pv_strike = cfg.K * cfg.discount
    return s * ndtr(d1) - pv_strike * ndtr(d2), pv_strike * ndtr(-d2) - s * ndtr(-d1)


def straddle_true_mu(cfg: StraddleConfig, s_tau) -> np.ndarray:
    """Conditional mean of the discounted payoff: call plus put."""
    call, put = straddle_call_put(cfg, s_tau)
    return call + put


def straddle_outer_scenarios(cfg: StraddleConfig, M: int | None = None) -> np.ndarray:
    """``S_tau`` at the lognormal quantile levels ``i / (M + 1)``, ``i = 1..M``."""
    M = cfg.M if M is None else int(M)
    if M < 1:
        raise ValueError("M must be >= 1")
    q = np.arange(1, M + 1) / (M + 1)
    return np.exp(cfg.outer_log_mean + cfg.outer_log_sd * ndtri(q))


def outer_density(cfg: StraddleConfig, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    z = (np.log(s) - cfg.outer_log_mean) / cfg.outer_log_sd
    return np.exp(-0.5 * z * z) / (s * cfg.outer_log_sd * math.sqrt(2 * math.pi))


def sample_outer(cfg: StraddleConfig, n: int, stream: np.random.Generator) -> np.ndarray:
    return np.exp(cfg.outer_log_mean + cfg.outer_log_sd * standard_normals(n, stream))


def erm_oracle(cfg: StraddleConfig, n_draws: int = 10**6, seed: int = 0) -> dict[str, float]:
    """Risk measures of ``mu(S_tau)`` from ``n_draws`` analytic outer draws."""
    s = sample_outer(cfg, n_draws, make_stream(seed, 0, ORACLE))
    return risk_report(straddle_true_mu(cfg, s), cfg.xi, cfg.alpha, extended=True)
