"""Comparison designs: standard nested simulation and a regression metamodel."""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.special import eval_laguerre


class RankDeficientError(ValueError):
    """The regression design matrix does not have full column rank."""


def _int_cube_root_ceil(value: int) -> int:
    """Smallest integer ``n`` with ``n**3 >= value``, without float rounding."""
    n = max(1, round(value ** (1.0 / 3.0)))
    while n**3 < value:
        n += 1
    while n > 1 and (n - 1) ** 3 >= value:
        n -= 1
    return n


def standard_design(budget: int) -> tuple[int, int]:
    """``(ceil(budget^(2/3)), ceil(budget^(1/3)))`` computed exactly."""
    budget = int(budget)
    if budget < 1:
        raise ValueError("budget must be >= 1")
    return _int_cube_root_ceil(budget * budget), _int_cube_root_ceil(budget)


def laguerre_features(s, s0: float, order: int = 3) -> np.ndarray:
    """Intercept plus ``exp(-u/2) L_n(u)``, ``n = 0..order``, with ``u = s / s0``."""
    u = np.asarray(s, dtype=float).reshape(-1) / s0
    w = np.exp(-0.5 * u)
    cols = [np.ones_like(u)] + [w * eval_laguerre(n, u) for n in range(order + 1)]
    return np.column_stack(cols)


def quadratic_features(theta) -> np.ndarray:
    """Intercept plus every coordinate and its square; no cross terms."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    return np.column_stack([np.ones(theta.shape[0]), theta, theta**2])


def regression_baseline(
    design_points,
    outputs,
    basis: Callable[[np.ndarray], np.ndarray],
    eval_points,
) -> np.ndarray:
    """Least-squares fit of ``outputs`` on ``basis(design_points)``; predict at ``eval_points``."""
    X = basis(np.asarray(design_points, dtype=float))
    y = np.asarray(outputs, dtype=float).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise ValueError("one output per design point is required")
    if X.shape[0] < X.shape[1]:
        raise RankDeficientError(f"{X.shape[0]} design points for {X.shape[1]} basis functions")
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        raise RankDeficientError(f"design matrix rank {rank} < {X.shape[1]} basis functions")
    return basis(np.asarray(eval_points, dtype=float)) @ coef
