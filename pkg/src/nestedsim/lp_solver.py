"""Revised two-phase primal simplex for ``min c'x  s.t.  Ax >= b, x >= 0``.

Rows are sign-normalized so the right-hand side is nonnegative.  A row
with ``b_i <= 0`` starts with its surplus basic; a row with ``b_i > 0``
gets an artificial.  Every basis is therefore a set of structural columns
``S`` plus one unit logical column for each row outside a row set ``R``
with ``|R| == |S|``.  Basic solves reduce to the ``|R| x |S|`` block of the
constraint matrix, so an iteration costs one small LU factorization and
one pricing product with the full matrix.  No tableau is formed, which
keeps LPs with thousands of dense rows in memory.

Pricing is Dantzig's rule, switching to Bland's rule after 50 consecutive
degenerate pivots.  Ratio-test ties go to the smallest variable index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import lu_factor, lu_solve

__all__ = ["LinearProgram", "LpSolution", "LpStatus", "LpSolverError", "solve"]

PIVOT_TOL = 1e-9
DEGENERATE_SWITCH = 50


class LpSolverError(RuntimeError):
    """The simplex iteration cap was hit or the basis became singular."""


class LpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LinearProgram:
    """``min c'x`` subject to ``A x >= b`` and ``x >= 0``."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        c = np.ascontiguousarray(self.c, dtype=float)
        A = np.ascontiguousarray(self.A, dtype=float)
        b = np.ascontiguousarray(self.b, dtype=float)
        if A.ndim != 2 or c.shape != (A.shape[1],) or b.shape != (A.shape[0],):
            raise ValueError(f"inconsistent LP shapes c{c.shape} A{A.shape} b{b.shape}")
        if not (np.isfinite(c).all() and np.isfinite(A).all() and np.isfinite(b).all()):
            raise ValueError("LP coefficients must be finite")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n_vars(self) -> int:
        return self.A.shape[1]

    @property
    def n_cons(self) -> int:
        return self.A.shape[0]

    def dual(self) -> "LinearProgram":
        """The dual ``max b'y, A'y <= c, y >= 0`` written in this class's form.

        The multipliers of the dual's rows are a primal optimum.
        """
        return LinearProgram(-self.b, -self.A.T, -self.c)

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x)

    def residual(self, x: np.ndarray) -> float:
        """``max(b - Ax)``; nonpositive means the rows are satisfied."""
        if self.n_cons == 0:
            return 0.0
        return float(np.max(self.b - self.A @ x))


@dataclass
class LpSolution:
    x: np.ndarray
    objective: float
    status: LpStatus
    iterations: int
    duals: np.ndarray = field(repr=False)

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


class _Simplex:
    def __init__(self, lp: LinearProgram, tol: float, max_iter: int):
        self.lp = lp
        self.tol = tol
        self.max_iter = max_iter
        m, n = lp.n_cons, lp.n_vars
        self.m, self.n = m, n
        self.sign = np.where(lp.b > 0, 1.0, -1.0)
        self.rhs = self.sign * lp.b
        self.has_art = lp.b > 0
        # Logical column coefficient for each row's basic logical.
        self.row_logical = np.where(self.has_art, n + m + np.arange(m), n + np.arange(m))
        self.S: list[int] = []
        self.R: list[int] = []
        self.iterations = 0
        self.degenerate_run = 0

    # -- column access ----------------------------------------------------
    def logical_coef(self, var: int) -> float:
        n, m = self.n, self.m
        if var >= n + m:
            return 1.0
        return -self.sign[var - n]

    def logical_row(self, var: int) -> int:
        n, m = self.n, self.m
        return var - n - m if var >= n + m else var - n

    def var_cost(self, var: int, phase: int) -> float:
        if var < self.n:
            return 0.0 if phase == 1 else self.lp.c[var]
        if var >= self.n + self.m:
            return 1.0 if phase == 1 else 0.0
        return 0.0

    # -- basis linear algebra ---------------------------------------------
    def factor(self):
        S, R = self.S, self.R
        self.AS = self.sign[:, None] * self.lp.A[:, S] if S else np.zeros((self.m, 0))
        self.free_rows = np.nonzero(self.row_logical >= 0)[0]
        self.free_coef = np.array([self.logical_coef(v) for v in self.row_logical[self.free_rows]])
        if S:
            block = self.AS[R, :]
            self.lu = lu_factor(block, check_finite=False)
            if not np.all(np.isfinite(self.lu[0])) or np.min(np.abs(np.diag(self.lu[0]))) == 0.0:
                raise LpSolverError("singular basis")

    def solve_basis(self, col: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Solve ``B w = col``; returns structural and row-logical parts."""
        if self.S:
            w_s = lu_solve(self.lu, col[self.R], check_finite=False)
            w_l = (col[self.free_rows] - self.AS[self.free_rows] @ w_s) / self.free_coef
        else:
            w_s = np.zeros(0)
            w_l = col[self.free_rows] / self.free_coef
        return w_s, w_l

    def duals(self, phase: int) -> np.ndarray:
        y = np.zeros(self.m)
        costs = np.array([self.var_cost(v, phase) for v in self.row_logical[self.free_rows]])
        y[self.free_rows] = costs / self.free_coef
        if self.S:
            c_s = np.array([self.var_cost(j, phase) for j in self.S])
            rhs = c_s - self.AS[self.free_rows].T @ y[self.free_rows]
            y[self.R] = lu_solve(self.lu, rhs, trans=1, check_finite=False)
        return y

    # -- iteration --------------------------------------------------------
    def basic_values(self):
        return self.solve_basis(self.rhs)

    def run_phase(self, phase: int) -> LpStatus:
        n, m = self.n, self.m
        self.degenerate_run = 0
        while True:
            if self.iterations >= self.max_iter:
                raise LpSolverError(f"simplex iteration cap {self.max_iter} exceeded")
            self.factor()
            x_s, x_l = self.basic_values()
            y = self.duals(phase)

            d_struct = (np.zeros(n) if phase == 1 else self.lp.c) - self.lp.A.T @ (self.sign * y)
            d_surplus = self.sign * y
            d_struct[self.S] = np.inf
            basic_logicals = self.row_logical[self.free_rows]
            d_surplus_masked = d_surplus.copy()
            surplus_basic = basic_logicals[basic_logicals < n + m] - n
            d_surplus_masked[surplus_basic] = np.inf
            if phase == 1:
                d_art = np.where(self.has_art, 1.0 - y, np.inf)
                art_basic = basic_logicals[basic_logicals >= n + m] - n - m
                d_art[art_basic] = np.inf
            else:
                d_art = np.full(m, np.inf)
            reduced = np.concatenate([d_struct, d_surplus_masked, d_art])

            candidates = np.nonzero(reduced < -self.tol)[0]
            if candidates.size == 0:
                return LpStatus.OPTIMAL
            if self.degenerate_run >= DEGENERATE_SWITCH:
                q = int(candidates[0])
            else:
                q = int(candidates[np.argmin(reduced[candidates])])

            if q < n:
                col = self.sign * self.lp.A[:, q]
            else:
                col = np.zeros(m)
                col[self.logical_row(q)] = self.logical_coef(q)
            w_s, w_l = self.solve_basis(col)

            basic_vars = np.concatenate([np.asarray(self.S, dtype=np.int64), basic_logicals])
            values = np.maximum(np.concatenate([x_s, x_l]), 0.0)
            direction = np.concatenate([w_s, w_l])
            eligible = direction > PIVOT_TOL
            if not eligible.any():
                return LpStatus.UNBOUNDED
            ratios = np.full(direction.shape, np.inf)
            ratios[eligible] = values[eligible] / direction[eligible]
            best = ratios.min()
            ties = np.nonzero(ratios <= best + 1e-12 * max(1.0, abs(best)))[0]
            pos = int(ties[np.argmin(basic_vars[ties])])
            leaving = int(basic_vars[pos])

            self.degenerate_run = self.degenerate_run + 1 if best <= self.tol else 0
            self.pivot(q, leaving)
            self.iterations += 1

    def pivot(self, entering: int, leaving: int):
        n = self.n
        if entering < n:
            if leaving < n:
                self.S[self.S.index(leaving)] = entering
            else:
                row = self.logical_row(leaving)
                self.row_logical[row] = -1
                self.S.append(entering)
                self.R.append(row)
        else:
            r = self.logical_row(entering)
            if self.row_logical[r] >= 0:
                raise LpSolverError("entering logical row already covered")
            if leaving < n:
                idx = self.S.index(leaving)
                del self.S[idx]
                self.R.remove(r)
            else:
                row = self.logical_row(leaving)
                self.R[self.R.index(r)] = row
                self.row_logical[row] = -1
            self.row_logical[r] = entering

    def primal(self) -> np.ndarray:
        self.factor()
        x_s, _ = self.basic_values()
        x = np.zeros(self.n)
        if self.S:
            x[self.S] = np.maximum(x_s, 0.0)
        return x


def solve(lp: LinearProgram, *, tol: float = PIVOT_TOL, max_iter: int | None = None) -> LpSolution:
    """Solve ``lp`` by the two-phase primal simplex method.

    Returns an :class:`LpSolution` whose ``duals`` are the row multipliers
    (nonnegative for ``>=`` rows at optimality).  Raises
    :class:`LpSolverError` when the iteration cap ``50 * (n_vars + n_cons)``
    is exceeded.
    """
    if max_iter is None:
        max_iter = 50 * (lp.n_vars + lp.n_cons)
    sx = _Simplex(lp, tol, max_iter)
    m, n = lp.n_cons, lp.n_vars

    if sx.has_art.any():
        status = sx.run_phase(1)
        if status is not LpStatus.OPTIMAL:  # phase 1 is bounded below by zero
            raise LpSolverError("phase 1 reported an unbounded direction")
        sx.factor()
        x_s, x_l = sx.basic_values()
        logicals = sx.row_logical[sx.free_rows]
        infeas = float(np.sum(np.maximum(x_l[logicals >= n + m], 0.0)))
        if infeas > 1e-7 * (1.0 + float(np.max(np.abs(lp.b)))):
            return LpSolution(sx.primal(), np.nan, LpStatus.INFEASIBLE, sx.iterations, np.zeros(m))
        # Artificials left in the basis sit at zero: swap each for its row's surplus.
        for row in np.nonzero(sx.row_logical >= n + m)[0]:
            sx.row_logical[row] = n + row
    status = sx.run_phase(2)
    x = sx.primal()
    if status is LpStatus.UNBOUNDED:
        return LpSolution(x, -np.inf, status, sx.iterations, np.zeros(m))
    sx.factor()
    y = sx.sign * sx.duals(2)
    return LpSolution(x, float(lp.c @ x), LpStatus.OPTIMAL, sx.iterations, y)
