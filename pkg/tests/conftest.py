import time

import numpy as np
import pytest

from scorepool.experiments import NonNestedSettings, run_nonnested, scenario_config
from scorepool.models import m1_posterior, m2_posterior
from scorepool.tensor import build_eval_tensor

# Benchmark hyperparameters used throughout the suite.
V0 = 10.0
NU0 = 0.1
TAU0 = 1.0

ACCEPTANCE_SEED = 0


@pytest.fixture(scope="session")
def scenario_sweep():
    """Desk-scale four-scenario comparison: M=20, n=200/50, S=4000.

    Session-scoped because both the acceptance gate and the qualitative
    weight checks read from the same sweep.
    """
    t0 = time.monotonic()
    settings = NonNestedSettings(n_draws=4000)
    rows_by_sc = {}
    for sc in (1, 2, 3, 4):
        cfg = scenario_config(sc, None, None, 200, 50, 20, ACCEPTANCE_SEED)
        rows, failures = run_nonnested(cfg, sc, settings)
        assert not failures, failures
        rows_by_sc[sc] = rows
    return rows_by_sc, time.monotonic() - t0


@pytest.fixture(scope="session")
def scenario1_train():
    """n=200 draws from normal(1, 1): the m1-correct regime."""
    rng = np.random.default_rng(20240617)
    return rng.normal(1.0, 1.0, 200)


@pytest.fixture(scope="session")
def fitted_pair(scenario1_train):
    m1 = m1_posterior(scenario1_train, v0=V0, n_draws=4000, seed=101)
    m2 = m2_posterior(scenario1_train, nu0=NU0, tau0=TAU0, n_draws=4000, seed=102)
    return m1, m2


@pytest.fixture(scope="session")
def pair_tensor(fitted_pair, scenario1_train):
    return build_eval_tensor(list(fitted_pair), scenario1_train)


def conjugate_m1(data, v0=V0):
    """(mu_n, sigma2_n) of the exact m1 posterior."""
    data = np.asarray(data, dtype=float)
    sigma2 = 1.0 / (1.0 / v0 + data.size)
    return sigma2 * data.sum(), sigma2


def snis_se_mean(logweights, values, estimate):
    """Delta-method standard error of a self-normalized IS mean."""
    w = np.exp(logweights - np.max(logweights))
    w = w / w.sum()
    return float(np.sqrt(np.sum(w**2 * (values - estimate) ** 2)))
