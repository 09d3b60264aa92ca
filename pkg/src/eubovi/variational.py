"""Mean-field Gaussian variational family and its noise draws."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class VariationalParams:
    """Diagonal Gaussian q(theta) = N(mu, diag(exp(log_sigma))^2)."""

    mu: np.ndarray
    log_sigma: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        log_sigma = np.array(self.log_sigma, dtype=float).reshape(-1)
        if mu.size == 0 or mu.shape != log_sigma.shape:
            raise ConfigurationError(
                f"mu and log_sigma must be non-empty and of equal length, "
                f"got {mu.shape} and {log_sigma.shape}"
            )
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(log_sigma))):
            raise ConfigurationError("variational parameters must be finite")
        mu.flags.writeable = False
        log_sigma.flags.writeable = False
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "log_sigma", log_sigma)

    @property
    def dim(self) -> int:
        return self.mu.size

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    def flatten(self) -> np.ndarray:
        """Concatenate as ``[mu, log_sigma]`` (length 2D)."""
        return np.concatenate([self.mu, self.log_sigma])

    @classmethod
    def from_flat(cls, flat) -> "VariationalParams":
        flat = np.asarray(flat, dtype=float)
        if flat.ndim != 1 or flat.size % 2:
            raise ConfigurationError("flat parameter vector must have even length")
        d = flat.size // 2
        return cls(flat[:d], flat[d:])

    @classmethod
    def initial(cls, dim: int, log_sigma: float = -2.3, mu_std: float = 0.0,
                rng: np.random.Generator | None = None) -> "VariationalParams":
        """Default start: mu = 0 (or N(0, mu_std^2) draws), constant log_sigma."""
        if dim < 1:
            raise ConfigurationError("latent dimension must be >= 1")
        mu = np.zeros(dim)
        if mu_std > 0.0:
            if rng is None:
                raise ConfigurationError("random mu initialization needs an rng")
            mu = mu_std * rng.standard_normal(dim)
        return cls(mu, np.full(dim, float(log_sigma)))


@dataclass(frozen=True)
class NoiseDraw:
    """M standard-normal draws of dimension D plus the seed that produced them."""

    epsilon: np.ndarray
    seed_record: int | None = None

    def __post_init__(self):
        eps = np.array(self.epsilon, dtype=float)
        if eps.ndim == 1:
            eps = eps[:, None]
        if eps.ndim != 2 or eps.shape[0] < 1:
            raise ConfigurationError(f"epsilon must be an M x D matrix, got shape {eps.shape}")
        if not np.all(np.isfinite(eps)):
            raise ConfigurationError("epsilon must be finite")
        eps.flags.writeable = False
        object.__setattr__(self, "epsilon", eps)

    @property
    def num_samples(self) -> int:
        return self.epsilon.shape[0]

    @classmethod
    def from_seed(cls, seed: int, num_samples: int, dim: int) -> "NoiseDraw":
        if num_samples < 1:
            raise ConfigurationError("number of particles must be >= 1")
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((num_samples, dim)), seed_record=int(seed))

    @classmethod
    def from_rng(cls, rng: np.random.Generator, num_samples: int, dim: int) -> "NoiseDraw":
        """Draw a fresh seed from ``rng`` and record it, so the draw can be replayed."""
        return cls.from_seed(int(rng.integers(2**63 - 1)), num_samples, dim)


def _check_dims(params: VariationalParams, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != params.dim:
        raise ConfigurationError(
            f"theta has trailing dimension {theta.shape[-1]}, expected {params.dim}"
        )
    return theta


def reparameterize(params: VariationalParams, noise: NoiseDraw) -> np.ndarray:
    """theta_i = mu + sigma * eps_i for every row of the noise matrix."""
    eps = _check_dims(params, noise.epsilon)
    return params.mu + params.sigma * eps


def log_density_q(params: VariationalParams, theta) -> np.ndarray | float:
    """Log density of q at ``theta`` (shape ``(D,)`` or ``(M, D)``), summed over D."""
    theta = _check_dims(params, theta)
    z = (theta - params.mu) / params.sigma
    out = np.sum(-_HALF_LOG_2PI - params.log_sigma - 0.5 * z * z, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def grad_logq_wrt_lambda(params: VariationalParams, theta) -> tuple[np.ndarray, np.ndarray]:
    """Score of q with theta held fixed.

    Returns ``(grad_mu, grad_log_sigma)``, each shaped like ``theta``::

        d/dmu        log q = (theta - mu) / sigma^2
        d/dlog_sigma log q = (theta - mu)^2 / sigma^2 - 1
    """
    theta = _check_dims(params, theta)
    diff = theta - params.mu
    inv_var = np.exp(-2.0 * params.log_sigma)
    return diff * inv_var, diff * diff * inv_var - 1.0
