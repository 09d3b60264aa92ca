"""Numerical self-checks: the bound inequalities on a Gaussian grid, model
gradients against finite differences, and estimator gradients against
quadrature on the conjugate testbed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import read_key_values
from .errors import ConfigurationError
from .gradients import (chi_score_gradient, pathwise_terms, _elbo_reparam,
                        _eubo_reparam, _renyi_reparam, eubo_score_gradient)
from .models import (BnnRegressionModel, ConjugateGaussianModel, DataBatch,
                     LogisticRegressionModel, ModelSpec)
from .oracle import (Density1D, QuadratureGrid, finite_diff_gradient, gaussian_tilted_moments,
                     quad_alpha_divergence, quad_chi_bound, quad_chi_divergence, quad_elbo,
                     quad_eubo, quad_kl, quad_renyi_bound, testbed_grid)
from .variational import NoiseDraw, VariationalParams


# --- bound inequalities -----------------------------------------------------------------

def _floats(text):
    return tuple(float(t) for t in str(text).split(",") if t.strip())


@dataclass(frozen=True)
class InequalityGrid:
    """Gaussian (p, q) pairs and the orders at which the inequalities are checked.

    Only pairs with ``sigma_q >= sigma_p`` are used, which keeps every tilted
    integral finite for alpha <= 0 and n > 1.
    """

    p_means: tuple[float, ...] = (-1.0, 0.0, 1.0)
    p_stds: tuple[float, ...] = (0.5, 0.75, 1.0)
    q_means: tuple[float, ...] = (-1.0, -0.5, 0.0, 0.5, 1.0)
    q_stds: tuple[float, ...] = (1.0, 1.5, 2.0)
    alphas: tuple[float, ...] = (-2.0, -1.0, -0.5, -0.1)
    chi_orders: tuple[float, ...] = (2.0, 3.0, 4.0)
    extra_chi_orders: tuple[float, ...] = (1.5,)
    observations: tuple[float, ...] = (0.0,)
    num_points: int = 10001
    tolerance: float = 1e-9

    def __post_init__(self):
        if any(a > 0 for a in self.alphas):
            raise ConfigurationError("the alpha inequality is stated for alpha <= 0")
        if any(n < 2 for n in self.chi_orders):
            raise ConfigurationError("chi_orders must be >= 2; put 1 < n < 2 in extra_chi_orders")
        if any(not n > 1 for n in self.extra_chi_orders):
            raise ConfigurationError("extra_chi_orders must exceed 1")
        if min(self.p_stds + self.q_stds) <= 0:
            raise ConfigurationError("standard deviations must be positive")

    @classmethod
    def from_file(cls, path) -> "InequalityGrid":
        kv = read_key_values(Path(path))
        known = set(cls.__dataclass_fields__)
        unknown = set(kv) - known
        if unknown:
            raise ConfigurationError(f"unknown grid keys: {sorted(unknown)}")
        values = {}
        for key, text in kv.items():
            if key == "num_points":
                values[key] = int(text)
            elif key == "tolerance":
                values[key] = float(text)
            else:
                values[key] = _floats(text)
        return cls(**values)

    def pairs(self):
        """``((mp, sp), (mq, sq))`` for every admissible combination."""
        for p in itertools.product(self.p_means, self.p_stds):
            for q in itertools.product(self.q_means, self.q_stds):
                if q[1] >= p[1]:
                    yield p, q

    def testbed_qs(self):
        return [VariationalParams(np.array([m]), np.array([np.log(s)]))
                for m, s in itertools.product(self.q_means, self.q_stds)]


@dataclass(frozen=True)
class Check:
    inequality: str
    case: str
    lhs: float
    rhs: float
    tolerance: float
    gating: bool = True

    @property
    def slack(self) -> float:
        """rhs - lhs; the check passes when this is at least -tolerance."""
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.slack >= -self.tolerance


@dataclass
class InequalityReport:
    checks: list[Check] = field(default_factory=list)
    num_pairs: int = 0

    @property
    def gating(self):
        return [c for c in self.checks if c.gating]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.gating)

    def summary(self, gating: bool = True) -> dict[str, tuple[int, int, float]]:
        """inequality -> (passed, total, worst slack) over gating or informational checks."""
        out = {}
        for c in self.checks:
            if c.gating != gating:
                continue
            ok, total, worst = out.get(c.inequality, (0, 0, np.inf))
            out[c.inequality] = (ok + c.passed, total + 1, min(worst, c.slack))
        return out


def _grid_for(gaussians, powers, num_points):
    comps = list(gaussians)
    p, q = gaussians
    for a in powers:
        tilted = gaussian_tilted_moments(p, q, a)
        if tilted is not None:
            comps.append(tilted)
    return QuadratureGrid.covering(comps, num_points=num_points)


def check_inequalities(grid: InequalityGrid | None = None) -> InequalityReport:
    """Evaluate every bound inequality on ``grid`` by quadrature.

    Divergence form on each (p, q) pair, where p plays the posterior:
    KL(q||p) >= 0 and KL(p||q) >= 0 (lower and upper bound gaps),
    D_alpha(q||p) >= -alpha/(1-alpha) KL(p||q) for alpha <= 0, and
    D_chi^n >= (n-1)/n KL(p||q).  Bound form on the conjugate testbed for
    every q: ELBO <= log p(D) <= EUBO and
    -alpha/(1-alpha) EUBO + 1/(1-alpha) log p(D) <= U_alpha, with the chi
    analogue at alpha = 1 - n.
    """
    grid = grid or InequalityGrid()
    tol = grid.tolerance
    report = InequalityReport()
    powers = [1.0 - a for a in grid.alphas] + list(grid.chi_orders) + list(grid.extra_chi_orders)
    for (mp, sp), (mq, sq) in grid.pairs():
        report.num_pairs += 1
        case = f"p=N({mp:g},{sp:g}^2) q=N({mq:g},{sq:g}^2)"
        qg = _grid_for([(mp, sp), (mq, sq)], powers, grid.num_points)
        p, q = Density1D.normal(mp, sp), Density1D.normal(mq, sq)
        kl_pq = quad_kl(p, q, qg)
        report.checks.append(Check("KL(q||p) >= 0", case, 0.0, quad_kl(q, p, qg), tol))
        report.checks.append(Check("KL(p||q) >= 0", case, 0.0, kl_pq, tol))
        for a in grid.alphas:
            report.checks.append(Check(
                "D_alpha >= -alpha/(1-alpha) KL", f"{case} alpha={a:g}",
                -a / (1.0 - a) * kl_pq, quad_alpha_divergence(q, p, a, qg), tol))
        for n in grid.chi_orders + grid.extra_chi_orders:
            report.checks.append(Check(
                "D_chi >= (n-1)/n KL", f"{case} n={n:g}",
                (n - 1.0) / n * kl_pq, quad_chi_divergence(q, p, n, qg), tol,
                gating=n in grid.chi_orders))

    model = ConjugateGaussianModel(grid.observations)
    log_ev = model.log_evidence()
    for q in grid.testbed_qs():
        case = f"testbed q=N({q.mu[0]:g},{q.sigma[0]:g}^2)"
        qg = testbed_grid(model, q, num_points=grid.num_points, powers=powers)
        eubo = quad_eubo(model, q, qg)
        report.checks.append(Check("ELBO <= log p(D)", case, quad_elbo(model, q, qg), log_ev, tol))
        report.checks.append(Check("log p(D) <= EUBO", case, log_ev, eubo, tol))
        for a in grid.alphas:
            report.checks.append(Check(
                "-a/(1-a) U + 1/(1-a) log p <= U_alpha", f"{case} alpha={a:g}",
                (-a * eubo + log_ev) / (1.0 - a), quad_renyi_bound(model, q, a, qg), tol))
        for n in grid.chi_orders + grid.extra_chi_orders:
            report.checks.append(Check(
                "(n-1)/n U + 1/n log p <= U_chi", f"{case} n={n:g}",
                ((n - 1.0) * eubo + log_ev) / n, quad_chi_bound(model, q, n, qg), tol,
                gating=n in grid.chi_orders))
    return report


# --- model gradients --------------------------------------------------------------------

@dataclass(frozen=True)
class GradCheckResult:
    model: str
    cases: int
    max_rel_error: float
    rtol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.rtol


def synthetic_problem(name: str, rng, num_points: int = 8) -> tuple[ModelSpec, DataBatch]:
    """A small random model and dataset for gradient checks."""
    rng = np.random.default_rng(rng)
    if name == "logreg":
        model = LogisticRegressionModel(4)
        x = rng.normal(size=(num_points, 4))
        return model, DataBatch(x, (rng.random(num_points) < 0.5).astype(float))
    if name == "bnn":
        model = BnnRegressionModel(3, hidden_units=5)
        return model, DataBatch(rng.normal(size=(num_points, 3)), rng.normal(size=num_points))
    if name == "conjugate":
        model = ConjugateGaussianModel(tuple(rng.normal(size=3)))
        return model, model.data()
    raise ConfigurationError(f"unknown model {name!r}; expected logreg, bnn or conjugate")


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def check_model_gradient(model: ModelSpec, batch: DataBatch, theta, h: float = 1e-5):
    """Worst relative error of grad(log prior + log lik) against central differences."""
    theta = np.asarray(theta, dtype=float).reshape(-1)

    def f(t):
        return float(model.log_prior(t[None])[0] + model.log_lik(t[None], batch).sum())

    analytic = (model.grad_log_prior(theta[None]) + model.grad_log_lik(theta[None], batch))[0]
    numeric = finite_diff_gradient(f, theta, h)
    # absolute floor: coordinates whose derivative is ~0 are limited by FD round-off
    return float(np.max(relative_error(analytic, numeric, floor=1e-3)))


def gradcheck_model(name: str, cases: int = 20, seed: int = 0, rtol: float = 1e-4,
                    h: float = 1e-5) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        model, batch = synthetic_problem(name, rng)
        theta = rng.normal(scale=0.7, size=model.latent_dim)
        worst = max(worst, check_model_gradient(model, batch, theta, h))
    return GradCheckResult(name, cases, worst, rtol)


# --- estimator gradients ----------------------------------------------------------------

ESTIMATOR_CASES = (
    ("eubo_score", None),
    ("eubo_reparam", None),
    ("elbo_reparam", None),
    ("renyi_reparam", -1.0),
    ("renyi_reparam", 0.0),
    ("chi_score", 2.0),
)


@dataclass(frozen=True)
class EstimatorCheck:
    estimator: str
    order: float | None
    estimate: np.ndarray
    reference: np.ndarray
    rtol: float
    atol: float

    def __post_init__(self):
        object.__setattr__(self, "estimate", np.asarray(self.estimate, dtype=float))
        object.__setattr__(self, "reference", np.asarray(self.reference, dtype=float))

    @property
    def label(self) -> str:
        if self.order is None:
            return self.estimator
        key = "alpha" if self.estimator.startswith("renyi") else "n"
        return f"{self.estimator}({key}={self.order:g})"

    @property
    def errors(self) -> np.ndarray:
        """Per-coordinate error, relative to |reference| or absolute when it is ~0."""
        diff = np.abs(self.estimate - self.reference)
        scale = np.abs(self.reference)
        relative = scale > self.atol
        return np.where(relative, diff / np.where(relative, scale, 1.0), diff)

    @property
    def passed(self) -> bool:
        diff = np.abs(self.estimate - self.reference)
        small = np.abs(self.reference) <= self.atol
        return bool(np.all(np.where(small, diff <= self.atol,
                                    diff <= self.rtol * np.abs(self.reference))))


def _powers(estimator: str, order) -> tuple[float, ...]:
    if estimator == "renyi_reparam":
        return (1.0 - order,)
    if estimator == "chi_score":
        return (order,)
    return (1.0,)


def quadrature_bound(model, estimator: str, order, q: VariationalParams, grid) -> float:
    """The bound that ``estimator`` differentiates, by quadrature."""
    if estimator.startswith("eubo"):
        return quad_eubo(model, q, grid)
    if estimator == "elbo_reparam":
        return quad_elbo(model, q, grid)
    if estimator == "renyi_reparam":
        return quad_renyi_bound(model, q, order, grid)
    return quad_chi_bound(model, q, order, grid)


def reference_gradient(model, estimator: str, order, q: VariationalParams,
                       h: float = 1e-5, num_points: int = 40001) -> np.ndarray:
    """Central-difference gradient in (mu, log_sigma) of the quadrature bound."""
    # one grid for all +/- h evaluations, padded so the shifted q stays covered
    grid = testbed_grid(model, q, num_points=num_points, powers=_powers(estimator, order))
    grid = QuadratureGrid(grid.lower - 2.0, grid.upper + 2.0, grid.num_points)
    return finite_diff_gradient(
        lambda lam: quadrature_bound(model, estimator, order,
                                     VariationalParams.from_flat(lam), grid),
        q.flatten(), h)


def monte_carlo_gradient(model, estimator: str, order, q: VariationalParams,
                         num_particles: int = 100_000, seed: int = 0) -> np.ndarray:
    data = model.data()
    noise = NoiseDraw.from_seed(seed, num_particles, q.dim)
    terms = pathwise_terms(model, data, noise, q, len(data))
    if estimator == "eubo_score":
        g = eubo_score_gradient(terms.particles, q)
    elif estimator == "chi_score":
        g = chi_score_gradient(terms.particles, q, order)
    elif estimator == "eubo_reparam":
        g = _eubo_reparam(terms)
    elif estimator == "elbo_reparam":
        g = _elbo_reparam(terms)
    elif estimator == "renyi_reparam":
        g = _renyi_reparam(terms, order)
    else:
        raise ConfigurationError(f"unknown estimator {estimator!r}")
    return g.flatten()


def check_estimators(model: ConjugateGaussianModel | None = None,
                     q: VariationalParams | None = None, num_particles: int = 100_000,
                     seed: int = 0, rtol: float = 0.05, atol: float = 0.01,
                     cases=ESTIMATOR_CASES) -> list[EstimatorCheck]:
    """Compare each estimator's large-sample gradient with the quadrature reference.

    ``atol`` applies to coordinates whose reference is within ``atol`` of zero
    (the Renyi alpha = 0 bound does not depend on q, so its gradient is zero).
    """
    model = model or ConjugateGaussianModel()
    q = q or VariationalParams(np.array([0.5]), np.array([0.0]))
    out = []
    for estimator, order in cases:
        out.append(EstimatorCheck(
            estimator, order,
            monte_carlo_gradient(model, estimator, order, q, num_particles, seed),
            reference_gradient(model, estimator, order, q), rtol, atol))
    return out


__all__ = [
    "Check", "EstimatorCheck", "GradCheckResult", "InequalityGrid",
    "InequalityReport", "check_estimators", "check_inequalities", "check_model_gradient",
    "gradcheck_model", "monte_carlo_gradient", "reference_gradient", "synthetic_problem",
]
