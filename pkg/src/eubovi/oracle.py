"""Deterministic ground truth in one dimension.

Simpson-rule quadrature for expectations, divergences and bounds, closed-form
Gaussian divergences, and central finite differences.  Integrals of
exponentials are accumulated in log space so that tail ratios never overflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import simpson
from scipy.special import logsumexp

from .errors import ConfigurationError, DivergentIntegralError, OracleError
from .models import ConjugateGaussianModel
from .variational import VariationalParams

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class QuadratureGrid:
    lower: float
    upper: float
    num_points: int = 10001
    rule: str = "simpson"

    def __post_init__(self):
        if not self.upper > self.lower:
            raise ConfigurationError("grid needs upper > lower")
        if self.num_points < 1001 or self.num_points % 2 == 0:
            raise ConfigurationError("grid needs an odd number of points, at least 1001")
        if self.rule != "simpson":
            raise ConfigurationError(f"unsupported quadrature rule {self.rule!r}")

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.lower, self.upper, self.num_points)

    @property
    def log_weights(self) -> np.ndarray:
        """Log of the composite Simpson weights (all positive)."""
        h = (self.upper - self.lower) / (self.num_points - 1)
        w = np.full(self.num_points, 2.0)
        w[1::2] = 4.0
        w[0] = w[-1] = 1.0
        return np.log(w * h / 3.0)

    @classmethod
    def covering(cls, gaussians, width: float = 10.0, num_points: int = 10001):
        """Grid spanning mean +/- ``width`` std of every ``(mean, std)`` pair."""
        gaussians = list(gaussians)
        lo = min(m - width * s for m, s in gaussians)
        hi = max(m + width * s for m, s in gaussians)
        return cls(lo, hi, num_points)


@dataclass(frozen=True)
class Density1D:
    """A normalized density given by its log.

    ``gaussian`` records ``(mean, std)`` when the density is Gaussian, which
    enables tail checks for integrals that may diverge.
    """

    log_density: Callable[[np.ndarray], np.ndarray]
    gaussian: tuple[float, float] | None = field(default=None)

    @classmethod
    def normal(cls, mean: float, std: float) -> "Density1D":
        mean, std = float(mean), float(std)
        if std <= 0:
            raise ConfigurationError("std must be positive")

        def log_density(x):
            z = (np.asarray(x, dtype=float) - mean) / std
            return -_HALF_LOG_2PI - np.log(std) - 0.5 * z * z

        return cls(log_density, (mean, std))

    @classmethod
    def from_params(cls, params: VariationalParams) -> "Density1D":
        if params.dim != 1:
            raise ConfigurationError("quadrature densities are one-dimensional")
        return cls.normal(params.mu[0], params.sigma[0])

    def normalization(self, grid: QuadratureGrid) -> float:
        return float(np.exp(_log_integral(self.log_density(grid.points), grid)))


def _finite(values, what):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise OracleError(f"non-finite {what} on the quadrature grid")
    return values


def _log_integral(log_integrand, grid: QuadratureGrid) -> float:
    """log of the Simpson integral of exp(log_integrand)."""
    log_integrand = np.asarray(log_integrand, dtype=float)
    if np.any(np.isnan(log_integrand)) or np.any(log_integrand == np.inf):
        raise OracleError("non-finite integrand on the quadrature grid")
    return float(logsumexp(log_integrand + grid.log_weights))


def _integrate(values, grid: QuadratureGrid) -> float:
    return float(simpson(_finite(values, "integrand"), x=grid.points))


def quad_expectation(f, p: Density1D, grid: QuadratureGrid) -> float:
    """Integral of f(theta) p(theta) over the grid."""
    x = grid.points
    return _integrate(np.asarray(f(x), dtype=float) * np.exp(p.log_density(x)), grid)


def quad_kl(p: Density1D, q: Density1D, grid: QuadratureGrid) -> float:
    """KL(p || q) = integral p log(p / q)."""
    x = grid.points
    lp = _finite(p.log_density(x), "log p")
    lq = _finite(q.log_density(x), "log q")
    return _integrate(np.exp(lp) * (lp - lq), grid)


def _tilted_precision(p: Density1D, q: Density1D, power: float) -> float | None:
    """Precision of q^(1 - power) p^power when both are Gaussian, else None."""
    if p.gaussian is None or q.gaussian is None:
        return None
    return power / p.gaussian[1] ** 2 + (1.0 - power) / q.gaussian[1] ** 2


def _log_tilted_integral(q: Density1D, p: Density1D, power: float, grid) -> float:
    """log integral q (p / q)^power, refusing integrals that diverge."""
    precision = _tilted_precision(p, q, power)
    if precision is not None and precision <= 0.0:
        raise DivergentIntegralError(
            f"integral of q (p/q)^{power:g} diverges: tilted precision {precision:.3g} <= 0"
        )
    x = grid.points
    lp = _finite(p.log_density(x), "log p")
    lq = _finite(q.log_density(x), "log q")
    return _log_integral(lq + power * (lp - lq), grid)


def quad_alpha_divergence(q: Density1D, p: Density1D, alpha: float, grid) -> float:
    """D_alpha(q || p) = 1/(1-alpha) log integral q (p/q)^(1-alpha)."""
    if alpha == 1.0:
        raise ConfigurationError("alpha = 1 is the KL limit; use quad_kl")
    return _log_tilted_integral(q, p, 1.0 - alpha, grid) / (1.0 - alpha)


def quad_chi_divergence(q: Density1D, p: Density1D, n: float, grid) -> float:
    """(1/n) log integral q (p/q)^n, for n > 1."""
    if not n > 1.0:
        raise ConfigurationError("chi divergence needs n > 1")
    return _log_tilted_integral(q, p, n, grid) / n


def gaussian_tilted_moments(p: tuple[float, float], q: tuple[float, float], power: float):
    """``(mean, std)`` of the normalized q^(1-power) p^power for Gaussians, or None."""
    (mp, sp), (mq, sq) = p, q
    precision = power / sp**2 + (1.0 - power) / sq**2
    if precision <= 0:
        return None
    mean = (power * mp / sp**2 + (1.0 - power) * mq / sq**2) / precision
    return mean, precision**-0.5


# --- bounds on the conjugate testbed ------------------------------------------------

def posterior_density(model: ConjugateGaussianModel) -> Density1D:
    mean, var = model.posterior()
    return Density1D.normal(mean, np.sqrt(var))


def testbed_grid(model: ConjugateGaussianModel, *qs: VariationalParams,
                 num_points: int = 10001, powers=()) -> QuadratureGrid:
    """Grid covering the posterior, every q, and every tilted q^(1-a) p^a."""
    mean, var = model.posterior()
    post = (mean, float(np.sqrt(var)))
    comps = [post] + [(float(q.mu[0]), float(q.sigma[0])) for q in qs]
    for q in qs:
        for a in powers:
            tilted = gaussian_tilted_moments(post, (float(q.mu[0]), float(q.sigma[0])), a)
            if tilted is not None:
                comps.append(tilted)
    return QuadratureGrid.covering(comps, num_points=num_points)


def _log_omega_on_grid(model, q: VariationalParams, grid):
    x = grid.points
    data = model.data()
    log_joint = model.log_prior(x[:, None]) + model.log_lik(x[:, None], data).sum(axis=1)
    return _finite(log_joint, "log joint"), _finite(
        Density1D.from_params(q).log_density(x), "log q")


def quad_eubo(model: ConjugateGaussianModel, q: VariationalParams, grid) -> float:
    """Integral of p(theta | D) log(p(D, theta) / q(theta))."""
    log_joint, lq = _log_omega_on_grid(model, q, grid)
    post = np.exp(posterior_density(model).log_density(grid.points))
    return _integrate(post * (log_joint - lq), grid)


def quad_elbo(model: ConjugateGaussianModel, q: VariationalParams, grid) -> float:
    """Integral of q(theta) log(p(D, theta) / q(theta))."""
    log_joint, lq = _log_omega_on_grid(model, q, grid)
    return _integrate(np.exp(lq) * (log_joint - lq), grid)


def quad_renyi_bound(model: ConjugateGaussianModel, q: VariationalParams, alpha: float,
                     grid) -> float:
    """1/(1-alpha) log integral q (p(D, theta)/q)^(1-alpha)."""
    if alpha == 1.0:
        raise ConfigurationError("alpha = 1 is the ELBO; use quad_elbo")
    power = 1.0 - alpha
    _check_tilt(model, q, power)
    log_joint, lq = _log_omega_on_grid(model, q, grid)
    return _log_integral(lq + power * (log_joint - lq), grid) / power


def quad_chi_bound(model: ConjugateGaussianModel, q: VariationalParams, n: float,
                   grid) -> float:
    """(1/n) log integral q (p(D, theta)/q)^n."""
    if not n > 1.0:
        raise ConfigurationError("chi bound needs n > 1")
    return quad_renyi_bound(model, q, 1.0 - n, grid)


def _check_tilt(model, q, power):
    precision = _tilted_precision(posterior_density(model), Density1D.from_params(q), power)
    if precision <= 0.0:
        raise DivergentIntegralError(
            f"bound integral with exponent {power:g} diverges for this q"
        )


# --- closed forms and finite differences ---------------------------------------------

def gaussian_kl(m1: float, s1: float, m2: float, s2: float) -> float:
    """KL(N(m1, s1^2) || N(m2, s2^2))."""
    return float(np.log(s2 / s1) + (s1**2 + (m1 - m2) ** 2) / (2.0 * s2**2) - 0.5)


def finite_diff_gradient(f, x, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``, one coordinate at a time."""
    x = np.array(x, dtype=float).reshape(-1)
    grad = np.empty_like(x)
    for j in range(x.size):
        up, down = x.copy(), x.copy()
        up[j] += h
        down[j] -= h
        grad[j] = (f(up) - f(down)) / (2.0 * h)
    return grad
