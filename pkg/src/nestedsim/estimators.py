"""Inner replications, pooled self-normalized LR estimators and nested statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .design import DesignSolution, as_scenario_matrix
from .input_models import ExponentialFamilyModel
from .rng import make_stream, stream_id

__all__ = [
    "ReplicationPool",
    "PooledEstimates",
    "RiskFunctional",
    "SimulationError",
    "simulate_pool",
    "self_normalized_estimate",
    "pooled_conditional_means",
    "mc_conditional_means",
    "nested_expectation",
    "empirical_quantile",
    "ecdf",
    "risk_report",
]

OutputFunction = Callable[[np.ndarray], np.ndarray]

# Target rows per log-LR block when pooling; bounds the (targets x reps) buffer.
_TARGET_BLOCK = 4096


class SimulationError(RuntimeError):
    """The output function returned a non-finite value."""


@dataclass
class ReplicationPool:
    """Inner inputs and outputs per sampling scenario.

    ``inputs[j]`` has shape ``(N_j, dim)`` and ``outputs[j]`` shape ``(N_j,)``.
    Scenarios without replications are absent from both mappings.
    """

    n_scenarios: int
    dim: int
    inputs: dict[int, np.ndarray] = field(default_factory=dict)
    outputs: dict[int, np.ndarray] = field(default_factory=dict)
    stream_ids: dict[int, int] = field(default_factory=dict)

    def sizes(self) -> np.ndarray:
        out = np.zeros(self.n_scenarios, dtype=np.int64)
        for j, y in self.outputs.items():
            out[j] = y.shape[0]
        return out

    def to_csv(self, path) -> None:
        cols = ["scenario", "replication"] + [f"x{k}" for k in range(self.dim)] + ["output"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for j in sorted(self.outputs):
                for k, (x, y) in enumerate(zip(self.inputs[j], self.outputs[j])):
                    w.writerow([j, k, *(repr(float(v)) for v in x), repr(float(y))])

    @classmethod
    def from_csv(cls, path, n_scenarios: int) -> "ReplicationPool":
        rows: dict[int, list] = {}
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            dim = len(header) - 3
            for rec in reader:
                rows.setdefault(int(rec[0]), []).append([float(v) for v in rec[2:]])
        pool = cls(n_scenarios, dim)
        for j, vals in rows.items():
            arr = np.asarray(vals)
            pool.inputs[j] = arr[:, :dim]
            pool.outputs[j] = arr[:, dim]
        return pool


@dataclass
class PooledEstimates:
    mu_star: np.ndarray
    components: dict[tuple[int, int], float] | None = None


@dataclass(frozen=True)
class RiskFunctional:
    """``zeta`` applied to each conditional mean.

    ``kind`` is one of ``cdf`` (``mu <= xi``), ``exceedance`` (``mu > xi``),
    ``hockey`` (``(mu - xi)^+``), ``squared`` (``(mu - xi)^2``) or
    ``squared_excess`` (``((mu - xi)^+)^2``).
    """

    kind: str
    xi: float

    KINDS = ("cdf", "exceedance", "hockey", "squared", "squared_excess")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown risk functional {self.kind!r}")
        if not math.isfinite(self.xi):
            raise ValueError("threshold must be finite")

    def __call__(self, mu: np.ndarray) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        if self.kind == "cdf":
            return (mu <= self.xi).astype(float)
        if self.kind == "exceedance":
            return (mu > self.xi).astype(float)
        if self.kind == "hockey":
            return np.where(mu > self.xi, mu - self.xi, 0.0)
        if self.kind == "squared_excess":
            return np.where(mu > self.xi, mu - self.xi, 0.0) ** 2
        return (mu - self.xi) ** 2


def simulate_pool(
    model: ExponentialFamilyModel,
    scenarios,
    design: DesignSolution,
    g: OutputFunction,
    seed: int,
    *,
    macro: int = 0,
    salt: int = 0,
) -> ReplicationPool:
    """Run ``integer_allocation[j]`` replications at every sampling scenario.

    Scenario ``j`` draws from its own stream ``(seed, salt, macro, j)``, so
    the pool does not depend on the order in which scenarios are simulated.
    """
    theta = as_scenario_matrix(model, scenarios)
    alloc = np.asarray(design.integer_allocation)
    if alloc.shape[0] != theta.shape[0]:
        raise ValueError("design and scenario counts differ")
    pool = ReplicationPool(theta.shape[0], model.dim)
    for j in np.nonzero(alloc > 0)[0]:
        j = int(j)
        stream = make_stream(seed, macro, j, salt)
        x = model.sample(theta[j], int(alloc[j]), stream)
        y = np.asarray(g(x), dtype=float).reshape(-1)
        if y.shape[0] != x.shape[0]:
            raise SimulationError(f"output function returned {y.shape[0]} values for {x.shape[0]} inputs")
        bad = np.nonzero(~np.isfinite(y))[0]
        if bad.size:
            raise SimulationError(f"non-finite output at scenario {j}, replication {int(bad[0])}")
        pool.inputs[j] = x
        pool.outputs[j] = y
        pool.stream_ids[j] = stream_id(macro, j)
    return pool


def _normalized_average(outputs: np.ndarray, log_weights: np.ndarray) -> np.ndarray:
    """Row-wise ``sum(g * e^lw) / sum(e^lw)`` with a max shift."""
    shifted = np.exp(log_weights - log_weights.max(axis=-1, keepdims=True))
    return (shifted @ outputs) / shifted.sum(axis=-1)


def self_normalized_estimate(outputs, log_weights) -> float:
    """Self-normalized LR estimate from outputs and log-likelihood ratios."""
    outputs = np.asarray(outputs, dtype=float)
    log_weights = np.asarray(log_weights, dtype=float)
    if outputs.ndim != 1 or outputs.shape != log_weights.shape:
        raise ValueError("outputs and log_weights must be 1-d of equal length")
    if outputs.size == 0:
        raise ValueError("at least one replication is required")
    anchor = outputs[0]
    return float(anchor + _normalized_average(outputs - anchor, log_weights))


def pooled_conditional_means(
    pool: ReplicationPool,
    design: DesignSolution,
    model: ExponentialFamilyModel,
    scenarios,
    *,
    keep_components: bool = False,
) -> PooledEstimates:
    """``mu*_i = sum_j gamma_ij mu_ij`` over pairs with positive weight.

    The replications at ``j`` are reused for every target ``i``.
    """
    theta = as_scenario_matrix(model, scenarios)
    gamma = np.asarray(design.gamma)
    m = theta.shape[0]
    mu = np.zeros(m)
    components: dict[tuple[int, int], float] | None = {} if keep_components else None
    sampling = [int(j) for j in np.nonzero((gamma > 0).any(axis=0))[0]]
    missing = [j for j in sampling if j not in pool.outputs]
    if missing:
        raise ValueError(f"pool has no replications at sampling scenario {missing[0]}")
    # Work with outputs centred on a common anchor so a constant output is
    # reproduced exactly, whatever the weights.
    anchor = float(pool.outputs[sampling[0]][0]) if sampling else 0.0
    for j in sampling:
        x, y = pool.inputs[j], pool.outputs[j] - anchor
        targets = np.nonzero(gamma[:, j] > 0)[0]
        for start in range(0, targets.size, _TARGET_BLOCK):
            block = targets[start : start + _TARGET_BLOCK]
            lw = model.log_lr_targets(theta[block], theta[j], x)
            # W_jj is identically one; avoid roundoff in its log.
            lw[block == j] = 0.0
            est = _normalized_average(y, lw)
            mu[block] += gamma[block, j] * est
            if components is not None:
                components.update({(int(i), j): float(e) + anchor for i, e in zip(block, est)})
    return PooledEstimates(mu + anchor, components)


def mc_conditional_means(pool: ReplicationPool) -> np.ndarray:
    """Plain sample mean of the own-scenario replications."""
    sizes = pool.sizes()
    if np.any(sizes == 0):
        raise ValueError(f"scenario {int(np.nonzero(sizes == 0)[0][0])} has no replications")
    return np.array([pool.outputs[j].mean() for j in range(pool.n_scenarios)])


def nested_expectation(mu_estimates, f: RiskFunctional) -> float:
    mu = np.asarray(mu_estimates, dtype=float)
    if mu.size == 0:
        raise ValueError("empty estimate vector")
    return float(np.mean(f(mu)))


def _order_index(m: int, alpha: float) -> int:
    # ceil(M alpha) with a guard against products such as 100 * 0.07 = 7.000000000000001
    k = math.ceil(m * alpha - 1e-9)
    return min(max(k, 1), m)


def empirical_quantile(mu_estimates, alpha: float) -> float:
    """The ``ceil(M alpha)``-th smallest estimate (1-indexed, no interpolation)."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    mu = np.asarray(mu_estimates, dtype=float).ravel()
    if mu.size == 0:
        raise ValueError("empty estimate vector")
    k = _order_index(mu.size, alpha)
    return float(np.partition(mu, k - 1)[k - 1])


def ecdf(mu_estimates, xi: float) -> float:
    mu = np.asarray(mu_estimates, dtype=float)
    if mu.size == 0:
        raise ValueError("empty estimate vector")
    return float(np.mean(mu <= xi))


def risk_report(mu_estimates, xi: float, alpha: float, *, extended: bool = False) -> dict[str, float]:
    """The four tail statistics; ``extended`` adds the squared excess."""
    out = {
        "quantile": empirical_quantile(mu_estimates, alpha),
        "exceedance": nested_expectation(mu_estimates, RiskFunctional("exceedance", xi)),
        "hockey": nested_expectation(mu_estimates, RiskFunctional("hockey", xi)),
        "squared": nested_expectation(mu_estimates, RiskFunctional("squared", xi)),
    }
    if extended:
        out["squared_excess"] = nested_expectation(mu_estimates, RiskFunctional("squared_excess", xi))
    return out

