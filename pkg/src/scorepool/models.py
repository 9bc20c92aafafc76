"""Exact posterior draws, likelihood derivatives, and data simulators.

Three sampling models cover all experiments:

* ``m1``: normal(theta, 1) likelihood with a normal(0, v0) prior on the
  mean; the posterior is normal and the predictive is available in closed
  form, which makes m1 the workhorse oracle for estimator tests.
* ``m2``: normal(0, theta2) likelihood with a scaled-inverse-chi^2 prior
  on the variance; again fully conjugate.
* ``regression``: Gaussian linear regression with independent wide normal
  priors on the coefficients and an inverse-gamma prior on the noise
  variance, sampled by Gibbs (the conditionals are exact).

Every model exposes a vectorized evaluator with the log density and its
first two derivatives in the outcome, plus a predictive sampler, which is
all the scoring pipeline ever needs.

RNG discipline: all draws come from counter-based Philox streams keyed by
``(root_seed, *spawn_key)``, so replications and models get independent,
reproducible streams no matter how work is scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy.special import gammaln

__all__ = [
    "Draws",
    "ScenarioConfig",
    "SCENARIOS",
    "rng_stream",
    "m1_posterior",
    "m2_posterior",
    "regression_gibbs",
    "log_marginal_m1",
    "log_marginal_m2",
    "simulate_scenario",
    "write_dataset_csv",
]

_LOG_2PI = math.log(2.0 * math.pi)


def rng_stream(root_seed: int, *spawn_key: int) -> np.random.Generator:
    """Independent counter-based stream for a (seed, key...) combination."""
    ss = np.random.SeedSequence(root_seed, spawn_key=tuple(spawn_key))
    return np.random.Generator(np.random.Philox(ss))


class LikelihoodEvaluator(Protocol):
    """Vectorized log f(y|theta) and its outcome derivatives.

    ``y`` may be a scalar or an array broadcastable against the per-draw
    parameter axis; ``point`` selects the data point for models whose
    likelihood depends on covariates and is ignored otherwise.
    """

    def log_density(self, y, params: np.ndarray, point: int = 0) -> np.ndarray: ...
    def grad_y(self, y, params: np.ndarray, point: int = 0) -> np.ndarray: ...
    def lap_y(self, y, params: np.ndarray, point: int = 0) -> np.ndarray: ...
    def sample_y(self, params: np.ndarray, rng: np.random.Generator,
                 point: int = 0) -> np.ndarray: ...


@dataclass(frozen=True)
class Draws:
    """Posterior parameter draws for one model plus its evaluator."""

    model_id: str
    params: np.ndarray
    evaluator: LikelihoodEvaluator

    def __post_init__(self):
        if len(self.params) < 1:
            raise ValueError("need at least one draw")

    @property
    def n_draws(self) -> int:
        return len(self.params)


class MeanNormalLikelihood:
    """y ~ normal(theta, 1); params are the S mean draws."""

    def log_density(self, y, params, point=0):
        return -0.5 * _LOG_2PI - 0.5 * (y - params) ** 2

    def grad_y(self, y, params, point=0):
        return params - y

    def lap_y(self, y, params, point=0):
        return np.broadcast_to(-1.0, np.broadcast_shapes(np.shape(y), params.shape)).copy()

    def sample_y(self, params, rng, point=0):
        return params + rng.standard_normal(params.shape)


class ScaleNormalLikelihood:
    """y ~ normal(0, theta2); params are the S variance draws."""

    def log_density(self, y, params, point=0):
        return -0.5 * (_LOG_2PI + np.log(params)) - 0.5 * y**2 / params

    def grad_y(self, y, params, point=0):
        return -y / params

    def lap_y(self, y, params, point=0):
        return -1.0 / params + np.zeros(np.broadcast_shapes(np.shape(y), params.shape))

    def sample_y(self, params, rng, point=0):
        return np.sqrt(params) * rng.standard_normal(params.shape)


class RegressionLikelihood:
    """y_i ~ normal(x_i . beta, sigma2); params pack (beta..., sigma2)."""

    def __init__(self, design: np.ndarray):
        self.design = np.asarray(design, dtype=float)

    def _mean_var(self, params, point):
        beta, sigma2 = params[..., :-1], params[..., -1]
        return self.design[point] @ beta.T, sigma2

    def log_density(self, y, params, point=0):
        mean, sigma2 = self._mean_var(params, point)
        return -0.5 * (_LOG_2PI + np.log(sigma2)) - 0.5 * (y - mean) ** 2 / sigma2

    def grad_y(self, y, params, point=0):
        mean, sigma2 = self._mean_var(params, point)
        return -(y - mean) / sigma2

    def lap_y(self, y, params, point=0):
        mean, sigma2 = self._mean_var(params, point)
        return -1.0 / sigma2 + np.zeros(np.broadcast_shapes(np.shape(y), mean.shape))

    def sample_y(self, params, rng, point=0):
        mean, sigma2 = self._mean_var(params, point)
        return mean + np.sqrt(sigma2) * rng.standard_normal(mean.shape)


# ---------------------------------------------------------------------------
# Posterior draw generators
# ---------------------------------------------------------------------------


def m1_posterior(data, v0: float = 10.0, n_draws: int = 4000,
                 seed: int = 0) -> Draws:
    """Exact draws from the conjugate mean-model posterior.

    Posterior: normal(mu_n, sigma_n^2) with sigma_n^2 = (1/v0 + n)^-1 and
    mu_n = sigma_n^2 * sum(y).
    """
    if v0 <= 0:
        raise ValueError("v0 must be positive")
    y = np.asarray(data, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("data must be non-empty")
    sigma2_n = 1.0 / (1.0 / v0 + y.size)
    mu_n = sigma2_n * y.sum()
    rng = rng_stream(seed)
    theta = mu_n + math.sqrt(sigma2_n) * rng.standard_normal(n_draws)
    return Draws("m1", theta, MeanNormalLikelihood())


def m1_posterior_params(data, v0: float = 10.0) -> tuple[float, float]:
    """(mu_n, sigma_n^2) of the m1 posterior; exposed for oracle tests."""
    y = np.asarray(data, dtype=float).ravel()
    sigma2_n = 1.0 / (1.0 / v0 + y.size)
    return sigma2_n * y.sum(), sigma2_n


def m2_posterior(data, nu0: float = 0.1, tau0: float = 1.0,
                 n_draws: int = 4000, seed: int = 0) -> Draws:
    """Exact draws from the conjugate variance-model posterior.

    Posterior: scaled-inverse-chi^2(nu0 + n, (nu0*tau0 + sum(y^2))/(nu0 + n)),
    drawn as nu_n * tau_n^2 / chi^2(nu_n).
    """
    if nu0 <= 0 or tau0 <= 0:
        raise ValueError("nu0 and tau0 must be positive")
    y = np.asarray(data, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("data must be non-empty")
    nu_n = nu0 + y.size
    tau2_n = (nu0 * tau0 + np.sum(y**2)) / nu_n
    rng = rng_stream(seed)
    theta2 = nu_n * tau2_n / rng.chisquare(nu_n, size=n_draws)
    return Draws("m2", theta2, ScaleNormalLikelihood())


def m2_posterior_params(data, nu0: float = 0.1, tau0: float = 1.0) -> tuple[float, float]:
    """(nu_n, tau_n^2) of the m2 posterior; exposed for oracle tests."""
    y = np.asarray(data, dtype=float).ravel()
    nu_n = nu0 + y.size
    return nu_n, (nu0 * tau0 + np.sum(y**2)) / nu_n


def regression_gibbs(
    design: np.ndarray,
    y: np.ndarray,
    coef_scale: float = 10.0,
    var_shape: float = 1.0,
    var_scale: float = 1.0,
    n_draws: int = 1000,
    warmup: int = 200,
    seed: int = 0,
) -> Draws:
    """Gibbs draws for Gaussian regression with an intercept.

    Alternates the exact conditionals

        beta   | sigma2 ~ normal(Lam^-1 X'y / sigma2, Lam^-1),
                 Lam = X'X/sigma2 + I/coef_scale^2
        sigma2 | beta   ~ inverse-gamma(var_shape + n/2,
                                        var_scale + ||y - X beta||^2 / 2)

    where X includes a leading column of ones.  Independent wide normal
    priors on all coefficients keep the posterior precision nonsingular
    even when p >= n.
    """
    x = np.atleast_2d(np.asarray(design, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n, p = x.shape
    if n != y.size or n == 0 or p < 1:
        raise ValueError("design and response shapes disagree")
    xa = np.hstack([np.ones((n, 1)), x])
    d = p + 1
    prior_prec = np.eye(d) / coef_scale**2
    xtx = xa.T @ xa
    xty = xa.T @ y

    rng = rng_stream(seed)
    sigma2 = 1.0
    out = np.empty((n_draws, d + 1))
    for it in range(warmup + n_draws):
        prec = xtx / sigma2 + prior_prec
        chol = np.linalg.cholesky(prec)
        mean = np.linalg.solve(prec, xty / sigma2)
        z = rng.standard_normal(d)
        beta = mean + np.linalg.solve(chol.T, z)
        rss = np.sum((y - xa @ beta) ** 2)
        sigma2 = (var_scale + 0.5 * rss) / rng.gamma(var_shape + 0.5 * n)
        if it >= warmup:
            out[it - warmup, :d] = beta
            out[it - warmup, d] = sigma2
    return Draws("regression", out, RegressionLikelihood(xa))


# ---------------------------------------------------------------------------
# Closed-form marginal likelihoods
# ---------------------------------------------------------------------------


def log_marginal_m1(data, v0: float = 10.0) -> float:
    """log p(y) under m1: multivariate normal with covariance I + v0*J.

    Uses the rank-one identities det(I + v0 J) = 1 + n v0 and
    (I + v0 J)^-1 = I - v0/(1 + n v0) J.
    """
    y = np.asarray(data, dtype=float).ravel()
    n = y.size
    s1, s2 = y.sum(), np.sum(y**2)
    quad = s2 - v0 / (1.0 + n * v0) * s1**2
    return -0.5 * n * _LOG_2PI - 0.5 * math.log1p(n * v0) - 0.5 * quad


def log_marginal_m2(data, nu0: float = 0.1, tau0: float = 1.0) -> float:
    """log p(y) under m2: closed form from inverse-chi^2 conjugacy."""
    y = np.asarray(data, dtype=float).ravel()
    n = y.size
    nu_n = nu0 + n
    a0 = 0.5 * nu0 * tau0
    an = a0 + 0.5 * np.sum(y**2)
    return (
        -0.5 * n * _LOG_2PI
        + 0.5 * nu0 * math.log(a0)
        - gammaln(0.5 * nu0)
        + gammaln(0.5 * nu_n)
        - 0.5 * nu_n * math.log(an)
    )


# ---------------------------------------------------------------------------
# Scenario simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    """True data-generating process and experiment sizes."""

    mu_star: float
    v_star: float
    n_train: int = 200
    n_test: int = 50
    replications: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.v_star <= 0:
            raise ValueError("v_star must be positive")
        if min(self.n_train, self.n_test, self.replications) < 1:
            raise ValueError("n_train, n_test, replications must be >= 1")


# (mu_star, v_star) for the four benchmark scenarios: m1 correct, m2
# correct, neither correct, both correct.
SCENARIOS: dict[int, tuple[float, float]] = {
    1: (1.0, 1.0),
    2: (0.0, 5.0),
    3: (4.0, 3.0),
    4: (0.0, 1.0),
}


def simulate_scenario(cfg: ScenarioConfig, replication: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Draw (train, test) i.i.d. from normal(mu_star, v_star).

    Each replication uses an independent stream spawned from the config
    seed, so replications can run in any order or in parallel.
    """
    rng = rng_stream(cfg.seed, replication)
    y = cfg.mu_star + math.sqrt(cfg.v_star) * rng.standard_normal(
        cfg.n_train + cfg.n_test
    )
    return y[: cfg.n_train], y[cfg.n_train:]


def write_dataset_csv(values, fh, manifest_hash: str | None = None) -> None:
    """Dump a simulated dataset as two-column CSV (point_id, y)."""
    if manifest_hash:
        fh.write(f"# manifest: {manifest_hash}\n")
    fh.write("point_id,y\n")
    for i, y in enumerate(np.asarray(values, dtype=float).ravel()):
        fh.write(f"{i},{float(y)!r}\n")
