"""Optimal sampling and pooling decisions for pooled nested simulation.

The sampling decision minimizes the total number of inner replications
subject to every scenario's pooled estimator reaching an effective sample
size of at least ``target_N``.  The pooling decision weights each pairwise
self-normalized estimator proportionally to its effective sample size.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .input_models import ExponentialFamilyModel
from .lp_solver import LinearProgram, LpSolverError, LpStatus, solve

__all__ = [
    "SecondMomentTable",
    "DesignSolution",
    "compute_second_moments",
    "build_design_lp",
    "solve_design",
    "pooling_weights",
    "achieved_ess",
    "standard_design_solution",
    "DEFAULT_DELTA",
]

DEFAULT_DELTA = 1e-6
ZERO_CUTOFF = 1e-12
# Entries of the table are evaluated in row blocks of at most this many cells.
_BLOCK_CELLS = 2_000_000


@dataclass(frozen=True)
class SecondMomentTable:
    """``log_values[i, j] = ln E_{theta_j}[W_ij^2]`` (``+inf`` allowed)."""

    log_values: np.ndarray

    def __post_init__(self):
        lv = np.array(self.log_values, dtype=float)
        if lv.ndim != 2 or lv.shape[0] != lv.shape[1]:
            raise ValueError("second-moment table must be square")
        if np.isnan(lv).any() or (lv < 0).any():
            raise ValueError("second moments must be >= 1 or +inf")
        np.fill_diagonal(lv, 0.0)
        lv.setflags(write=False)
        object.__setattr__(self, "log_values", lv)

    @classmethod
    def from_values(cls, values: Any) -> "SecondMomentTable":
        values = np.asarray(values, dtype=float)
        with np.errstate(divide="ignore"):
            return cls(np.log(values))

    @property
    def size(self) -> int:
        return self.log_values.shape[0]

    @property
    def values(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_values)

    @property
    def inverse(self) -> np.ndarray:
        """``1 / E[W_ij^2]``, exactly zero for infinite entries."""
        return np.exp(-self.log_values)


def as_scenario_matrix(model: ExponentialFamilyModel, scenarios: Any) -> np.ndarray:
    """Validate scenarios and return them as an ``(M, param_dim)`` array."""
    theta = np.asarray(scenarios, dtype=float)
    if theta.ndim == 0:
        theta = theta.reshape(1, 1)
    elif theta.ndim == 1:
        theta = theta[:, None] if model.param_dim == 1 else theta[None, :]
    if theta.ndim != 2:
        raise ValueError("scenarios must form an (M, p) array")
    return model.check_theta(theta)


def compute_second_moments(model: ExponentialFamilyModel, scenarios: Any) -> SecondMomentTable:
    """Closed-form second-moment table for the given scenarios."""
    theta = as_scenario_matrix(model, scenarios)
    m = theta.shape[0]
    out = np.empty((m, m))
    rows = max(1, _BLOCK_CELLS // max(1, m * model.param_dim))
    for start in range(0, m, rows):
        stop = min(m, start + rows)
        out[start:stop] = model.log_second_moment(theta[start:stop, None, :], theta[None, :, :])
    np.maximum(out, 0.0, out=out)
    return SecondMomentTable(out)


def build_design_lp(table: SecondMomentTable, target_N: float) -> LinearProgram:
    """``min sum_j N_j`` s.t. ``sum_j N_j / E[W_ij^2] >= target_N`` for all i."""
    m = table.size
    return LinearProgram(np.ones(m), table.inverse, np.full(m, float(target_N)))


@dataclass
class DesignSolution:
    c_star: np.ndarray
    target_N: float
    delta: float
    N_star: np.ndarray
    integer_allocation: np.ndarray
    gamma: np.ndarray = field(repr=False)
    lp_iterations: int = 0

    @property
    def budget(self) -> int:
        return int(self.integer_allocation.sum())

    @property
    def size(self) -> int:
        return self.c_star.shape[0]

    @property
    def sampling_scenarios(self) -> np.ndarray:
        return np.nonzero(self.integer_allocation > 0)[0]

    def rescaled(self, target_N: float) -> "DesignSolution":
        """The optimal design for another precision target, without re-solving."""
        n_star = _floor_allocation(self.c_star, target_N, self.delta)
        return DesignSolution(
            self.c_star, float(target_N), self.delta, n_star, _ceil(n_star), self.gamma, self.lp_iterations
        )

    def to_json_dict(self) -> dict:
        rows, cols = np.nonzero(self.gamma)
        return {
            "c_star": self.c_star.tolist(),
            "N_star": self.N_star.tolist(),
            "integer_allocation": self.integer_allocation.astype(int).tolist(),
            "gamma": {
                "shape": list(self.gamma.shape),
                "entries": [[int(i), int(j), float(self.gamma[i, j])] for i, j in zip(rows, cols)],
            },
            "budget": self.budget,
            "target_N": self.target_N,
            "delta": self.delta,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "DesignSolution":
        shape = tuple(data["gamma"]["shape"])
        gamma = np.zeros(shape)
        for i, j, w in data["gamma"]["entries"]:
            gamma[int(i), int(j)] = w
        return cls(
            c_star=np.asarray(data["c_star"], dtype=float),
            target_N=float(data["target_N"]),
            delta=float(data["delta"]),
            N_star=np.asarray(data["N_star"], dtype=float),
            integer_allocation=np.asarray(data["integer_allocation"], dtype=np.int64),
            gamma=gamma,
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json_dict(), indent=1)


def _floor_allocation(c_star: np.ndarray, target_N: float, delta: float) -> np.ndarray:
    small = (c_star > 0) & (c_star < delta)
    return np.where(small, delta * target_N, c_star * target_N)


def _ceil(n_star: np.ndarray) -> np.ndarray:
    # Guard against values such as 459.0000000000001 produced by rounding.
    return np.ceil(n_star - 1e-9 * np.maximum(1.0, n_star)).astype(np.int64)


def pooling_weights(c_star: Any, table: SecondMomentTable) -> np.ndarray:
    """ESS-proportional weights ``gamma_ij ~ c_j / E[W_ij^2]``, rows summing to one."""
    c_star = np.asarray(c_star, dtype=float)
    ess = table.inverse * c_star[None, :]
    totals = ess.sum(axis=1)
    if np.any(totals <= 0):
        bad = int(np.nonzero(totals <= 0)[0][0])
        raise ValueError(f"scenario {bad} has no sampling scenario with finite second moment")
    return ess / totals[:, None]


def _solve_unit_lp(table: SecondMomentTable) -> tuple[np.ndarray, int]:
    """Optimal allocation of the design LP at ``target_N = 1``.

    The LP is solved through its dual, whose slack basis is feasible, so no
    artificial phase is needed.  The dual's row multipliers are the primal
    optimum.
    """
    lp = build_design_lp(table, 1.0)
    sol = solve(lp.dual())
    if sol.status is not LpStatus.OPTIMAL:
        raise LpSolverError(f"design LP dual returned {sol.status.value}")
    c = np.where(sol.duals > ZERO_CUTOFF, sol.duals, 0.0)
    # Restore exact feasibility lost to the 1e-9 optimality tolerance.
    worst = float((lp.A @ c).min())
    if worst <= 0:
        raise LpSolverError("design LP recovered an infeasible allocation")
    if worst < 1.0:
        c = c / worst
    if c.sum() > table.size * (1.0 + 1e-9):
        raise LpSolverError("design LP optimum worse than the no-pooling allocation")
    return c, sol.iterations


def solve_design(table: SecondMomentTable, target_N: float, delta: float = DEFAULT_DELTA) -> DesignSolution:
    """Solve the design LP at ``N = 1`` and scale to ``target_N``.

    Positive allocations below ``delta`` are floored to ``delta * target_N``;
    the integer allocation is the componentwise ceiling.
    """
    if not target_N >= 1:
        raise ValueError("target_N must be >= 1")
    if not 0 <= delta < 1:
        raise ValueError("delta must lie in [0, 1)")
    c_star, iters = _solve_unit_lp(table)
    gamma = pooling_weights(c_star, table)
    n_star = _floor_allocation(c_star, target_N, delta)
    return DesignSolution(c_star, float(target_N), float(delta), n_star, _ceil(n_star), gamma, iters)


def achieved_ess(design: DesignSolution, table: SecondMomentTable) -> np.ndarray:
    """Approximate effective sample size of each pooled estimator."""
    return table.inverse @ design.N_star


def standard_design_solution(m: int, n_inner: int) -> DesignSolution:
    """No pooling: ``n_inner`` replications at every scenario, identity weights."""
    c = np.ones(m)
    n_star = np.full(m, float(n_inner))
    return DesignSolution(c, float(n_inner), 0.0, n_star, np.full(m, int(n_inner), dtype=np.int64), np.eye(m))


def budget_summary(design: DesignSolution) -> dict:
    m = design.size
    full = m * design.target_N
    return {
        "budget": design.budget,
        "M_times_N": full,
        "savings_ratio": full / design.budget if design.budget else math.inf,
        "sampling_scenarios": int(design.sampling_scenarios.size),
    }


def design_from_scenarios(
    model: ExponentialFamilyModel, scenarios: Sequence, target_N: float, delta: float = DEFAULT_DELTA
) -> tuple[SecondMomentTable, DesignSolution]:
    table = compute_second_moments(model, scenarios)
    return table, solve_design(table, target_N, delta)
