"""Probabilistic models with hand-derived gradients in theta.

Every model works on a stack of particles: ``theta`` has shape ``(M, D)``
(a single ``(D,)`` vector is promoted), and per-datum log-likelihoods come
back as an ``(M, S)`` matrix for a batch of ``S`` observations.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, InputError

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class DataBatch:
    """A set of observations: ``features`` is ``(S, F)``, ``targets`` is ``(S,)``."""

    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        targets = np.asarray(self.targets, dtype=float).reshape(-1)
        features = np.asarray(self.features, dtype=float)
        if features.ndim == 1:
            features = features.reshape(targets.size, -1)
        if features.shape[0] != targets.size:
            raise InputError(
                f"features have {features.shape[0]} rows but there are {targets.size} targets"
            )
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "targets", targets)

    def __len__(self):
        return self.targets.size

    def subset(self, index) -> "DataBatch":
        return DataBatch(self.features[index], self.targets[index])


def _as_particles(theta, dim: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    theta = np.atleast_2d(theta)
    if theta.ndim != 2 or theta.shape[1] != dim:
        raise ConfigurationError(f"theta must have trailing dimension {dim}, got {theta.shape}")
    return theta


def _std_normal_log_prior(theta):
    return np.sum(-_HALF_LOG_2PI - 0.5 * theta * theta, axis=1)


class ModelSpec(abc.ABC):
    """Interface for a model p(D, theta) = p(theta) prod_n p(x_n | theta)."""

    #: whether :meth:`grad_log_prior` and :meth:`grad_log_lik` are available
    has_theta_gradient = True
    name = "model"

    @property
    @abc.abstractmethod
    def latent_dim(self) -> int: ...

    @abc.abstractmethod
    def log_prior(self, theta) -> np.ndarray:
        """``(M,)`` log prior densities."""

    @abc.abstractmethod
    def log_lik(self, theta, batch: DataBatch) -> np.ndarray:
        """``(M, S)`` per-datum log-likelihoods."""

    def grad_log_prior(self, theta) -> np.ndarray:
        raise NotImplementedError

    def grad_log_lik(self, theta, batch: DataBatch) -> np.ndarray:
        """``(M, D)`` gradient of the log-likelihood summed over the batch."""
        raise NotImplementedError

    def check_batch(self, batch: DataBatch) -> None:
        """Hook for model-specific validation of a data batch."""


class LogisticRegressionModel(ModelSpec):
    """Bernoulli likelihood with logit x . theta and a N(0, 1) prior per coefficient.

    ``feature_dim`` counts the intercept column, which the data loader appends.
    """

    name = "logreg"

    def __init__(self, feature_dim: int):
        if feature_dim < 1:
            raise ConfigurationError("feature_dim must be >= 1")
        self.feature_dim = int(feature_dim)

    @property
    def latent_dim(self):
        return self.feature_dim

    def check_batch(self, batch):
        y = batch.targets
        if not np.all((y == 0.0) | (y == 1.0)):
            bad = y[(y != 0.0) & (y != 1.0)][0]
            raise InputError(f"logistic regression labels must be 0 or 1, got {bad!r}")
        if batch.features.shape[1] != self.feature_dim:
            raise ConfigurationError(
                f"expected {self.feature_dim} features, got {batch.features.shape[1]}"
            )

    def log_prior(self, theta):
        return _std_normal_log_prior(_as_particles(theta, self.latent_dim))

    def grad_log_prior(self, theta):
        return -_as_particles(theta, self.latent_dim)

    def logits(self, theta, features) -> np.ndarray:
        return _as_particles(theta, self.latent_dim) @ np.asarray(features, dtype=float).T

    def log_lik(self, theta, batch):
        self.check_batch(batch)
        z = self.logits(theta, batch.features)
        # log sigmoid(z) for y=1 and log sigmoid(-z) for y=0, both as -softplus
        return -np.logaddexp(0.0, (1.0 - 2.0 * batch.targets) * z)

    def grad_log_lik(self, theta, batch):
        self.check_batch(batch)
        z = self.logits(theta, batch.features)
        return (batch.targets - expit(z)) @ batch.features

    def predict(self, theta, features) -> np.ndarray:
        """``(M, S)`` probabilities of label 1, one row per draw."""
        return expit(self.logits(theta, features))


class BnnRegressionModel(ModelSpec):
    """One-hidden-layer ReLU network with Gaussian observation noise.

    The latent vector is laid out as ``[W1 (H x D_in, row-major), b1 (H),
    w2 (H), b2, gamma]`` where ``gamma`` is the log noise standard deviation.
    All coordinates have a N(0, 1) prior.
    """

    name = "bnn"

    def __init__(self, input_dim: int, hidden_units: int = 50):
        if input_dim < 1 or hidden_units < 1:
            raise ConfigurationError("input_dim and hidden_units must be >= 1")
        self.input_dim = int(input_dim)
        self.hidden_units = int(hidden_units)

    @property
    def latent_dim(self):
        h, d = self.hidden_units, self.input_dim
        return h * (d + 1) + (h + 1) + 1

    def unpack(self, theta):
        theta = _as_particles(theta, self.latent_dim)
        m = theta.shape[0]
        h, d = self.hidden_units, self.input_dim
        i = h * d
        w1 = theta[:, :i].reshape(m, h, d)
        b1 = theta[:, i:i + h]
        w2 = theta[:, i + h:i + 2 * h]
        b2 = theta[:, i + 2 * h]
        gamma = theta[:, i + 2 * h + 1]
        return w1, b1, w2, b2, gamma

    def check_batch(self, batch):
        if batch.features.shape[1] != self.input_dim:
            raise ConfigurationError(
                f"expected {self.input_dim} inputs, got {batch.features.shape[1]}"
            )

    def _forward(self, theta, features):
        w1, b1, w2, b2, gamma = self.unpack(theta)
        # batched matmul runs through BLAS; einsum here is several times slower
        pre = np.matmul(features, w1.transpose(0, 2, 1))
        pre += b1[:, None, :]
        act = np.maximum(pre, 0.0)
        out = np.matmul(act, w2[:, :, None])[..., 0] + b2[:, None]
        return pre, act, out, w2, gamma

    def predict(self, theta, features) -> np.ndarray:
        """``(M, S)`` network outputs f_theta(x), one row per draw."""
        self.check_batch(DataBatch(features, np.zeros(len(features))))
        return self._forward(theta, np.asarray(features, dtype=float))[2]

    def noise_std(self, theta) -> np.ndarray:
        return np.exp(self.unpack(theta)[4])

    def log_prior(self, theta):
        return _std_normal_log_prior(_as_particles(theta, self.latent_dim))

    def grad_log_prior(self, theta):
        return -_as_particles(theta, self.latent_dim)

    def log_lik(self, theta, batch):
        self.check_batch(batch)
        _, _, out, _, gamma = self._forward(theta, batch.features)
        resid = batch.targets - out
        g = gamma[:, None]
        return -_HALF_LOG_2PI - g - 0.5 * resid * resid * np.exp(-2.0 * g)

    def grad_log_lik(self, theta, batch):
        self.check_batch(batch)
        x = batch.features
        pre, act, out, w2, gamma = self._forward(theta, x)
        resid = batch.targets - out
        inv_var = np.exp(-2.0 * gamma)[:, None]
        d_out = resid * inv_var                                  # (M, S)
        d_gamma = np.sum(resid * resid * inv_var - 1.0, axis=1)  # (M,)
        d_b2 = d_out.sum(axis=1)
        d_w2 = np.einsum("ms,msh->mh", d_out, act)
        d_pre = d_out[:, :, None] * w2[:, None, :] * (pre > 0.0)
        d_b1 = d_pre.sum(axis=1)
        d_w1 = np.einsum("msh,sd->mhd", d_pre, x)
        m = d_out.shape[0]
        return np.concatenate(
            [d_w1.reshape(m, -1), d_b1, d_w2, d_b2[:, None], d_gamma[:, None]], axis=1
        )


class ConjugateGaussianModel(ModelSpec):
    """theta ~ N(prior_mean, prior_var), y_n | theta ~ N(theta, lik_var); theta is scalar.

    Posterior and evidence are available in closed form, which makes this the
    ground-truth testbed for bounds and gradient estimators.
    """

    name = "conjugate"

    def __init__(self, observations=(0.0,), prior_mean=0.0, prior_var=1.0, lik_var=1.0):
        if prior_var <= 0 or lik_var <= 0:
            raise ConfigurationError("variances must be positive")
        self.observations = np.asarray(observations, dtype=float).reshape(-1)
        self.prior_mean = float(prior_mean)
        self.prior_var = float(prior_var)
        self.lik_var = float(lik_var)

    @property
    def latent_dim(self):
        return 1

    def data(self) -> DataBatch:
        """All observations as a batch (the features matrix has zero columns)."""
        return DataBatch(np.empty((self.observations.size, 0)), self.observations)

    def log_prior(self, theta):
        t = _as_particles(theta, 1)[:, 0]
        d = t - self.prior_mean
        return -_HALF_LOG_2PI - 0.5 * np.log(self.prior_var) - 0.5 * d * d / self.prior_var

    def grad_log_prior(self, theta):
        t = _as_particles(theta, 1)
        return -(t - self.prior_mean) / self.prior_var

    def log_lik(self, theta, batch):
        t = _as_particles(theta, 1)
        r = batch.targets[None, :] - t
        return -_HALF_LOG_2PI - 0.5 * np.log(self.lik_var) - 0.5 * r * r / self.lik_var

    def grad_log_lik(self, theta, batch):
        t = _as_particles(theta, 1)
        return np.sum(batch.targets[None, :] - t, axis=1, keepdims=True) / self.lik_var

    def posterior(self) -> tuple[float, float]:
        """Exact posterior ``(mean, variance)``."""
        n = self.observations.size
        precision = 1.0 / self.prior_var + n / self.lik_var
        var = 1.0 / precision
        mean = var * (self.prior_mean / self.prior_var + self.observations.sum() / self.lik_var)
        return mean, var

    def log_evidence(self) -> float:
        # chain rule of predictives: p(y_1..y_N) = prod_n p(y_n | y_<n)
        mean, var, total = self.prior_mean, self.prior_var, 0.0
        for y in self.observations:
            pred_var = var + self.lik_var
            total += -_HALF_LOG_2PI - 0.5 * np.log(pred_var) - 0.5 * (y - mean) ** 2 / pred_var
            gain = var / pred_var
            mean, var = mean + gain * (y - mean), var * (1.0 - gain)
        return float(total)


def conjugate_posterior_and_evidence(model: ConjugateGaussianModel):
    """Return ``((posterior mean, posterior variance), log evidence)``."""
    return model.posterior(), model.log_evidence()
