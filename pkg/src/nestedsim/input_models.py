"""Exponential-family input models.

Each model describes the joint distribution ``h(x; theta)`` of the inputs
generated within one inner replication.  Coordinates are independent, so
the log-partition and the likelihood-ratio second moment factorize over
coordinates.  All likelihood-ratio arithmetic stays in log space.

Scenarios are arrays whose last axis has length ``param_dim``; input
samples are ``(n, dim)`` arrays.
"""

from __future__ import annotations

import math
from typing import Any, Mapping

import numpy as np
from scipy.special import gammaln

__all__ = [
    "DomainError",
    "ExponentialFamilyModel",
    "NormalModel",
    "LognormalModel",
    "PoissonModel",
    "ExponentialModel",
    "model_from_config",
    "log_density",
    "sample",
    "log_likelihood_ratio",
    "second_moment_lr",
    "standard_normals",
]


class DomainError(ValueError):
    """A scenario lies outside the model's admissible parameter set."""


def standard_normals(n: int, stream: np.random.Generator) -> np.ndarray:
    """Box-Muller transform of the stream's uniforms."""
    pairs = (n + 1) // 2
    u1 = 1.0 - stream.random(pairs)  # (0, 1]
    u2 = stream.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.empty(2 * pairs)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:n]


_INVERSION_STEPS = 2000


def _poisson_cdf_table(lam: float) -> np.ndarray:
    """Cumulative pmf by the same recurrence the sequential search uses."""
    p = math.exp(-lam)
    cdf = [p]
    k = 0
    while cdf[-1] < 1.0 and p > 0.0 and k < _INVERSION_STEPS:
        k += 1
        p *= lam / k
        cdf.append(cdf[-1] + p)
    return np.array(cdf)


def _poisson_inversion(lam: np.ndarray, stream: np.random.Generator) -> np.ndarray:
    """Smallest ``k`` with ``F(k) >= u`` for one uniform per rate (1-d input)."""
    u = stream.random(lam.shape)
    rates, inverse = np.unique(lam, return_inverse=True)
    if rates.size * 50 <= lam.size:
        # Few distinct rates: search a cdf table per rate.
        k = np.empty(lam.shape, dtype=np.int64)
        for r, rate in enumerate(rates):
            sel = inverse == r
            table = _poisson_cdf_table(float(rate))
            k[sel] = np.minimum(np.searchsorted(table, u[sel], side="left"), table.size - 1)
        return k
    k = np.zeros(lam.shape, dtype=np.int64)
    p = np.exp(-lam)
    cdf = p.copy()
    idx = np.nonzero(u > cdf)[0]
    step = 0
    while idx.size and step < _INVERSION_STEPS:
        step += 1
        k[idx] += 1
        p[idx] *= lam[idx] / k[idx]
        cdf[idx] += p[idx]
        # p == 0 means the cdf saturated below u through rounding.
        keep = (u[idx] > cdf[idx]) & (p[idx] > 0.0)
        idx = idx[keep]
    return k


def _poisson_ptrd(lam: np.ndarray, stream: np.random.Generator) -> np.ndarray:
    """Transformed rejection with decomposition (Hormann 1993), rates >= 10."""
    out = np.empty(lam.shape, dtype=np.int64)
    pending = np.arange(lam.size)
    lam_flat = lam.ravel()
    res_flat = out.ravel()
    while pending.size:
        mu = lam_flat[pending]
        slam = np.sqrt(mu)
        loglam = np.log(mu)
        b = 0.931 + 2.53 * slam
        a = -0.059 + 0.02483 * b
        invalpha = 1.1239 + 1.1328 / (b - 3.4)
        vr = 0.9277 - 3.6224 / (b - 2.0)
        u = stream.random(pending.size) - 0.5
        v = stream.random(pending.size)
        us = 0.5 - np.abs(u)
        k = np.floor((2.0 * a / us + b) * u + mu + 0.43)
        quick = (us >= 0.07) & (v <= vr)
        reject = (k < 0) | ((us < 0.013) & (v > us))
        with np.errstate(divide="ignore", invalid="ignore"):
            lhs = np.log(v) + np.log(invalpha) - np.log(a / (us * us) + b)
            rhs = -mu + k * loglam - gammaln(k + 1.0)
        accept = quick | (~reject & (lhs <= rhs))
        res_flat[pending[accept]] = k[accept].astype(np.int64)
        pending = pending[~accept]
    return out


def poisson_draws(lam: np.ndarray, stream: np.random.Generator) -> np.ndarray:
    """Poisson variates with elementwise rates ``lam``.

    Inversion for rates up to 30, PTRD rejection above.
    """
    lam = np.asarray(lam, dtype=float)
    out = np.empty(lam.shape, dtype=np.int64)
    small = lam <= 30.0
    if small.any():
        out[small] = _poisson_inversion(lam[small], stream)
    if (~small).any():
        out[~small] = _poisson_ptrd(lam[~small], stream)
    return out


class ExponentialFamilyModel:
    """Product of independent one-parameter exponential-family coordinates.

    Subclasses define the per-coordinate natural parameter ``eta(theta)``,
    log-partition ``A(eta)``, sufficient statistic ``T(x)``, log base
    measure ``ln B(x)`` and natural-space test.  The joint log-density is
    ``sum(ln B(x) + eta * T(x) - A(eta))`` over coordinates.
    """

    family: str = ""

    def __init__(self, dim: int):
        if int(dim) < 1:
            raise ValueError("dim must be >= 1")
        self.dim = int(dim)

    @property
    def param_dim(self) -> int:
        return self.dim

    # -- per-coordinate exponential-family structure ------------------
    def natural_params(self, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def coord_log_partition(self, eta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sufficient_stat(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float)

    def log_base(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def in_natural_space(self, eta: np.ndarray) -> np.ndarray:
        return np.isfinite(eta)

    def _check_values(self, theta: np.ndarray) -> bool:
        return True

    def _draw(self, theta: np.ndarray, n: int, stream: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    # -- derived --------------------------------------------------------
    def check_theta(self, theta: Any) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 0:
            theta = theta.reshape(1)
        if theta.shape[-1] != self.param_dim:
            raise DomainError(
                f"{self.family}: scenario has {theta.shape[-1]} parameters, "
                f"expected {self.param_dim}"
            )
        if not np.all(np.isfinite(theta)) or not self._check_values(theta):
            raise DomainError(f"{self.family}: scenario outside the parameter domain")
        return theta

    def log_partition(self, eta: np.ndarray) -> np.ndarray:
        return self.coord_log_partition(eta).sum(axis=-1)

    def log_density(self, theta: Any, x: Any) -> np.ndarray:
        theta = self.check_theta(theta)
        x = np.asarray(x, dtype=float)
        eta = self.natural_params(theta)
        terms = self.log_base(x) + eta * self.sufficient_stat(x) - self.coord_log_partition(eta)
        return terms.sum(axis=-1)

    def log_lr(self, theta_i: Any, theta_j: Any, x: Any) -> np.ndarray:
        """``ln h(x; theta_i) - ln h(x; theta_j)``; the base measure cancels."""
        eta_i = self.natural_params(self.check_theta(theta_i))
        eta_j = self.natural_params(self.check_theta(theta_j))
        t = self.sufficient_stat(np.asarray(x, dtype=float))
        shift = self.coord_log_partition(eta_i) - self.coord_log_partition(eta_j)
        return ((eta_i - eta_j) * t - shift).sum(axis=-1)

    def log_lr_targets(self, targets: np.ndarray, theta_j: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Log LRs for many targets against one sampler: ``(n_targets, n)``."""
        eta_i = self.natural_params(self.check_theta(targets))
        eta_j = self.natural_params(self.check_theta(theta_j))
        t = self.sufficient_stat(np.asarray(x, dtype=float))
        shift = (self.coord_log_partition(eta_i) - self.coord_log_partition(eta_j)).sum(axis=-1)
        return (eta_i - eta_j) @ t.T - shift[:, None]

    def generic_log_second_moment(self, theta_i: Any, theta_j: Any) -> np.ndarray:
        """``ln E_j[W_ij^2]`` from the log-partition identity.

        ``A(eta_j) - 2 A(eta_i) + A(2 eta_i - eta_j)`` per coordinate, or
        ``+inf`` when ``2 eta_i - eta_j`` leaves the natural space.
        """
        eta_i = self.natural_params(self.check_theta(theta_i))
        eta_j = self.natural_params(self.check_theta(theta_j))
        eta_i, eta_j = np.broadcast_arrays(eta_i, eta_j)
        probe = 2.0 * eta_i - eta_j
        ok = self.in_natural_space(probe)
        with np.errstate(invalid="ignore", divide="ignore"):
            val = (
                self.coord_log_partition(eta_j)
                - 2.0 * self.coord_log_partition(eta_i)
                + self.coord_log_partition(np.where(ok, probe, eta_j))
            )
        val = np.where(ok, val, np.inf)
        return val.sum(axis=-1)

    def log_second_moment(self, theta_i: Any, theta_j: Any) -> np.ndarray:
        """Closed-form ``ln E_j[W_ij^2]``, broadcasting over leading axes."""
        return self.generic_log_second_moment(theta_i, theta_j)

    def second_moment(self, theta_i: Any, theta_j: Any) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_second_moment(theta_i, theta_j))

    def sample(self, theta: Any, n: int, stream: np.random.Generator) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be >= 0")
        theta = self.check_theta(theta)
        if theta.ndim != 1:
            raise ValueError("sample() takes a single scenario")
        if n == 0:
            return np.empty((0, self.dim))
        return self._draw(theta, int(n), stream)

    def sample_each(self, thetas: Any, stream: np.random.Generator) -> np.ndarray:
        """One draw per row of ``thetas`` from a single stream: ``(n, dim)``."""
        thetas = self.check_theta(thetas)
        if thetas.ndim != 2:
            raise ValueError("sample_each() takes an (n, p) scenario array")
        if thetas.shape[0] == 0:
            return np.empty((0, self.dim))
        return self._draw(thetas, thetas.shape[0], stream)

    def to_config(self) -> dict:
        return {"family": self.family, "dim": self.dim, "hyper": self._hyper()}

    def _hyper(self) -> dict:
        return {}

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dim={self.dim}, hyper={self._hyper()})"


def _per_coord(value: Any, dim: int, name: str) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(value, dtype=float), (dim,)).copy()
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError(f"{name} must be positive and finite")
    return arr


class NormalModel(ExponentialFamilyModel):
    """Independent normals with known variances; the scenario is the mean."""

    family = "independent-normal-known-variance"

    def __init__(self, dim: int = 1, variance: Any = 1.0):
        super().__init__(dim)
        self.variance = _per_coord(variance, self.dim, "variance")

    def natural_params(self, theta):
        return theta / self.variance

    def coord_log_partition(self, eta):
        return 0.5 * self.variance * eta * eta

    def log_base(self, x):
        return -0.5 * x * x / self.variance - 0.5 * np.log(2.0 * np.pi * self.variance)

    def log_second_moment(self, theta_i, theta_j):
        ti = self.check_theta(theta_i)
        tj = self.check_theta(theta_j)
        return (((ti - tj) ** 2) / self.variance).sum(axis=-1)

    def _draw(self, theta, n, stream):
        z = standard_normals(n * self.dim, stream).reshape(n, self.dim)
        return theta + np.sqrt(self.variance) * z

    def _hyper(self):
        return {"variance": self.variance.tolist()}


class LognormalModel(ExponentialFamilyModel):
    """Independent lognormals with known log-variance.

    The scenario is a positive scale ``theta``; the log-mean is
    ``ln(theta) + offset``.  ``compat_variance`` replaces the log-variance
    in the second-moment closed form only (used to reproduce a published
    formula that drops the horizon factor).
    """

    family = "lognormal-known-logvariance"

    def __init__(
        self,
        dim: int = 1,
        logvar: Any = 1.0,
        offset: Any = 0.0,
        compat_variance: float | None = None,
    ):
        super().__init__(dim)
        self.logvar = _per_coord(logvar, self.dim, "logvar")
        self.offset = np.broadcast_to(np.asarray(offset, dtype=float), (self.dim,)).copy()
        if compat_variance is not None and not compat_variance > 0:
            raise ValueError("compat_variance must be positive")
        self.compat_variance = compat_variance

    def _check_values(self, theta):
        return bool(np.all(theta > 0))

    def log_mean(self, theta):
        return np.log(theta) + self.offset

    def natural_params(self, theta):
        return self.log_mean(theta) / self.logvar

    def coord_log_partition(self, eta):
        return 0.5 * self.logvar * eta * eta

    def sufficient_stat(self, x):
        return np.log(x)

    def log_base(self, x):
        lx = np.log(x)
        return -lx - 0.5 * lx * lx / self.logvar - 0.5 * np.log(2.0 * np.pi * self.logvar)

    def log_second_moment(self, theta_i, theta_j):
        ti = self.check_theta(theta_i)
        tj = self.check_theta(theta_j)
        scale = self.logvar if self.compat_variance is None else self.compat_variance
        return (((np.log(ti) - np.log(tj)) ** 2) / scale).sum(axis=-1)

    def _draw(self, theta, n, stream):
        z = standard_normals(n * self.dim, stream).reshape(n, self.dim)
        return np.exp(self.log_mean(theta) + np.sqrt(self.logvar) * z)

    def _hyper(self):
        hyper = {"logvar": self.logvar.tolist(), "offset": self.offset.tolist()}
        if self.compat_variance is not None:
            hyper["compat_variance"] = self.compat_variance
        return hyper


class PoissonModel(ExponentialFamilyModel):
    """Independent Poisson counts; the scenario is the rate vector."""

    family = "independent-poisson"

    def _check_values(self, theta):
        return bool(np.all(theta > 0))

    def natural_params(self, theta):
        return np.log(theta)

    def coord_log_partition(self, eta):
        return np.exp(eta)

    def log_base(self, x):
        return -gammaln(x + 1.0)

    def log_second_moment(self, theta_i, theta_j):
        ti = self.check_theta(theta_i)
        tj = self.check_theta(theta_j)
        return (((ti - tj) ** 2) / tj).sum(axis=-1)

    def _draw(self, theta, n, stream):
        if theta.ndim == 1 and np.all(theta <= 30.0):
            # One rate per column: invert against a cdf table per coordinate.
            u = stream.random((n, self.dim))
            out = np.empty((n, self.dim), dtype=np.int64)
            for c, rate in enumerate(theta):
                table = _poisson_cdf_table(float(rate))
                out[:, c] = np.minimum(np.searchsorted(table, u[:, c], side="left"), table.size - 1)
            return out
        return poisson_draws(np.broadcast_to(theta, (n, self.dim)), stream)


class ExponentialModel(ExponentialFamilyModel):
    """Independent exponentials; the scenario is the rate vector.

    The natural parameter is ``-rate``, so the natural space is ``eta < 0``
    and the second moment is infinite unless ``2 rate_i > rate_j``.
    """

    family = "independent-exponential"

    def _check_values(self, theta):
        return bool(np.all(theta > 0))

    def natural_params(self, theta):
        return -theta

    def coord_log_partition(self, eta):
        with np.errstate(invalid="ignore", divide="ignore"):
            return -np.log(-eta)

    def in_natural_space(self, eta):
        return eta < 0

    def log_base(self, x):
        return np.zeros_like(x, dtype=float)

    def log_second_moment(self, theta_i, theta_j):
        ti = self.check_theta(theta_i)
        tj = self.check_theta(theta_j)
        ti, tj = np.broadcast_arrays(ti, tj)
        gap = 2.0 * ti - tj
        with np.errstate(invalid="ignore", divide="ignore"):
            val = 2.0 * np.log(ti) - np.log(tj) - np.log(gap)
        return np.where(gap > 0, val, np.inf).sum(axis=-1)

    def _draw(self, theta, n, stream):
        u = 1.0 - stream.random((n, self.dim))
        return -np.log(u) / theta


_FAMILIES = {
    NormalModel.family: NormalModel,
    "normal": NormalModel,
    LognormalModel.family: LognormalModel,
    "lognormal": LognormalModel,
    PoissonModel.family: PoissonModel,
    "poisson": PoissonModel,
    ExponentialModel.family: ExponentialModel,
    "exponential": ExponentialModel,
}

_HYPER_KEYS = {
    NormalModel: {"variance"},
    LognormalModel: {"logvar", "offset", "compat_variance"},
    PoissonModel: set(),
    ExponentialModel: set(),
}


def model_from_config(spec: Mapping[str, Any]) -> ExponentialFamilyModel:
    """Build a model from ``{"family": ..., "dim": d, "hyper": {...}}``."""
    try:
        cls = _FAMILIES[spec["family"]]
    except KeyError as exc:
        raise ValueError(f"unknown model family: {spec.get('family')!r}") from exc
    hyper = dict(spec.get("hyper") or {})
    unknown = set(hyper) - _HYPER_KEYS[cls]
    if unknown:
        raise ValueError(f"unknown hyperparameters for {cls.family}: {sorted(unknown)}")
    return cls(int(spec.get("dim", 1)), **hyper)


# Functional API ---------------------------------------------------------

def log_density(model: ExponentialFamilyModel, theta, x) -> float | np.ndarray:
    out = model.log_density(theta, x)
    return float(out) if np.ndim(out) == 0 else out


def sample(model: ExponentialFamilyModel, theta, n: int, stream: np.random.Generator) -> np.ndarray:
    return model.sample(theta, n, stream)


def log_likelihood_ratio(model: ExponentialFamilyModel, theta_i, theta_j, x) -> float | np.ndarray:
    out = model.log_lr(theta_i, theta_j, x)
    return float(out) if np.ndim(out) == 0 else out


def second_moment_lr(model: ExponentialFamilyModel, theta_i, theta_j) -> float:
    """``E_{theta_j}[W_ij^2]``; ``math.inf`` when the integral diverges."""
    val = float(model.second_moment(theta_i, theta_j))
    return math.inf if np.isnan(val) else val
