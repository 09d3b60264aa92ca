"""SGD and Adam steps on the flattened ``[mu, log_sigma]`` vector."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, OptimizerError
from .gradients import GradientEstimate
from .variational import VariationalParams


@dataclass(frozen=True)
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stab: float = 1e-8
    step_count: int = 0
    first_moment: np.ndarray | None = None
    second_moment: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.kind == "adam" and not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("Adam betas must lie in [0, 1)")

    @classmethod
    def create(cls, kind: str, dim: int, **settings) -> "OptimizerState":
        """Fresh state for ``dim`` latent coordinates (moments have length 2*dim)."""
        if kind == "adam":
            zeros = np.zeros(2 * dim)
            return cls(kind, first_moment=zeros, second_moment=zeros.copy(), **settings)
        return cls(kind, **settings)


def optimizer_step(state: OptimizerState, params: VariationalParams,
                   grad: GradientEstimate) -> tuple[OptimizerState, VariationalParams]:
    """Move ``params`` against ``grad``; returns the new state and parameters."""
    g = grad.flatten()
    x = params.flatten()
    if g.shape != x.shape:
        raise ConfigurationError(f"gradient has shape {g.shape}, parameters {x.shape}")
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        raise OptimizerError(
            f"non-finite gradient at step {state.step_count}",
            payload={"step": state.step_count, "coordinates": bad.tolist(),
                     "values": g[bad].tolist(), "estimator": grad.estimator_tag},
        )
    t = state.step_count + 1
    if state.kind == "sgd":
        new_x = x - state.learning_rate * g
        new_state = dataclasses.replace(state, step_count=t)
    else:
        if state.first_moment is None or state.first_moment.shape != x.shape:
            raise ConfigurationError("Adam moments do not match the parameter dimension")
        m = state.beta1 * state.first_moment + (1.0 - state.beta1) * g
        v = state.beta2 * state.second_moment + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        new_x = x - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps_stab)
        new_state = dataclasses.replace(state, step_count=t, first_moment=m, second_moment=v)
    if not np.all(np.isfinite(new_x)):
        raise OptimizerError(f"parameters became non-finite at step {t}", payload={"step": t})
    return new_state, VariationalParams.from_flat(new_x)
