"""Score-function estimators against closed-form conjugate oracles."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scorepool.estimators import (
    DegenerateWeightsWarning,
    grad_log_predictive,
    hyvarinen_point,
    lap_log_predictive,
    log_predictive_density,
    loo_reweight,
    score_table,
)
from scorepool.models import m1_posterior
from scorepool.tensor import PointEvaluations, build_eval_tensor

from conftest import V0, conjugate_m1, snis_se_mean

LOG_2PI = math.log(2.0 * math.pi)


def pe_from(loglik, dloglik, d2loglik, **kw):
    return PointEvaluations("m", 0, loglik, dloglik, d2loglik, **kw)


def normal_logpdf(y, mean, var):
    return -0.5 * (LOG_2PI + np.log(var)) - 0.5 * (y - mean) ** 2 / var


class TestSingleDraw:
    def test_grad_collapses(self):
        pe = pe_from([-1.3], [0.7], [-2.0])
        assert grad_log_predictive(pe) == 0.7

    def test_lap_collapses(self):
        pe = pe_from([-1.3], [0.7], [-2.0])
        assert lap_log_predictive(pe) == pytest.approx(-2.0, abs=1e-14)

    def test_lpd_collapses(self):
        pe = pe_from([-1.3], [0.7], [-2.0])
        assert log_predictive_density(pe) == pytest.approx(-1.3, abs=1e-14)


def test_symmetric_draws_cancel():
    # Equal log likelihood at y=0 for theta = +-a: slopes average to zero.
    a = 1.7
    pe = pe_from([-0.5 * a**2, -0.5 * a**2], [a, -a], [-1.0, -1.0])
    assert grad_log_predictive(pe) == pytest.approx(0.0, abs=1e-15)


def test_constant_vector_lpd():
    pe = pe_from([-2.5] * 8, [0.1] * 8, [-1.0] * 8)
    assert log_predictive_density(pe) == pytest.approx(-2.5, abs=1e-12)


class TestHyvarinenExactValues:
    # H(y) for the standard normal is y^2 - 2.
    @pytest.mark.parametrize("y,expected", [(0.0, -2.0), (1.0, -1.0), (2.0, 2.0)])
    def test_standard_normal(self, y, expected):
        pe = pe_from([normal_logpdf(y, 0.0, 1.0)], [0.0 - y], [-1.0])
        est = hyvarinen_point(pe)
        assert est.hyva == pytest.approx(expected, abs=1e-12)

    def test_general_normal(self):
        # H(y) = (y-m)^2/v^2 - 2/v for a N(m, v) predictive.
        m, v = 0.8, 2.3
        for y in (-1.0, 0.5, 3.0):
            pe = pe_from([normal_logpdf(y, m, v)], [-(y - m) / v], [-1.0 / v])
            est = hyvarinen_point(pe)
            assert est.hyva == pytest.approx((y - m) ** 2 / v**2 - 2.0 / v, rel=1e-12)


def test_hyva_identity_exact(pair_tensor):
    for k in range(pair_tensor.n_models):
        for i in range(0, 20, 3):
            pe = pair_tensor.point(k, i)
            est = hyvarinen_point(pe)
            assert est.hyva == 2.0 * est.lap + est.grad**2  # by construction


def test_ess_bounds(pair_tensor):
    for i in range(10):
        est = hyvarinen_point(pair_tensor.point(0, i))
        assert 1.0 <= est.ess <= 4000.0


def test_lap_upper_bound_variance_decomposition():
    rng = np.random.default_rng(0)
    pe = pe_from(rng.normal(size=60), rng.normal(size=60), rng.normal(size=60))
    lam = pe.loglik - pe.loglik.max()
    w = np.exp(lam) / np.exp(lam).sum()
    bound = float(w @ (pe.d2loglik + pe.dloglik**2))
    assert lap_log_predictive(pe) <= bound + 1e-12


@pytest.fixture(scope="module")
def oracle_setup(scenario1_train, fitted_pair):
    mu_n, s2 = conjugate_m1(scenario1_train)
    pv = 1.0 + s2
    ys = np.linspace(mu_n - 2.5, mu_n + 2.5, 11)
    tensor = build_eval_tensor([fitted_pair[0]], ys)
    return tensor, ys, mu_n, pv


class TestConjugateOracle:
    """m1 with exact posterior draws: estimators vs the closed-form
    predictive N(mu_n, 1 + sigma2_n)."""

    def test_grad_within_mc_error(self, oracle_setup):
        tensor, ys, mu_n, pv = oracle_setup
        for i, y in enumerate(ys):
            pe = tensor.point(0, i)
            g = grad_log_predictive(pe)
            se = snis_se_mean(pe.loglik, pe.dloglik, g)
            assert abs(g - (-(y - mu_n) / pv)) < max(4.0 * se, 1e-8)

    def test_lap_close(self, oracle_setup):
        tensor, ys, _, pv = oracle_setup
        for i in range(len(ys)):
            lap = lap_log_predictive(tensor.point(0, i))
            assert lap == pytest.approx(-1.0 / pv, abs=5e-3)

    def test_lpd_close(self, oracle_setup):
        tensor, ys, mu_n, pv = oracle_setup
        for i, y in enumerate(ys):
            lpd = log_predictive_density(tensor.point(0, i))
            assert lpd == pytest.approx(normal_logpdf(y, mu_n, pv), abs=1e-2)

    def test_error_shrinks_with_draws(self, scenario1_train):
        mu_n, s2 = conjugate_m1(scenario1_train)
        pv = 1.0 + s2
        y = mu_n + 1.5
        errs = []
        for s in (50, 50000):
            model = m1_posterior(scenario1_train, v0=V0, n_draws=s, seed=55)
            pe = build_eval_tensor([model], [y]).point(0, 0)
            errs.append(abs(grad_log_predictive(pe) - (-(y - mu_n) / pv)))
        assert errs[1] < errs[0]


class TestFiniteDifferenceConsistency:
    def test_grad_matches_fd_of_lpd(self, fitted_pair, scenario1_train):
        mu_n, _ = conjugate_m1(scenario1_train)
        h = 1e-4
        for y in (mu_n - 1.5, mu_n + 0.9, mu_n + 2.0):
            t = build_eval_tensor([fitted_pair[0]], [y - h, y, y + h])
            lpd = [log_predictive_density(t.point(0, i)) for i in range(3)]
            g = grad_log_predictive(t.point(0, 1))
            if abs(g) > 0.1:
                fd = (lpd[2] - lpd[0]) / (2 * h)
                assert abs(fd - g) / abs(g) < 1e-4

    def test_lap_matches_second_differences(self, fitted_pair, scenario1_train):
        mu_n, _ = conjugate_m1(scenario1_train)
        h = 1e-4
        for y in (mu_n - 1.0, mu_n + 1.3):
            t = build_eval_tensor([fitted_pair[0]], [y - h, y, y + h])
            lpd = [log_predictive_density(t.point(0, i)) for i in range(3)]
            lap = lap_log_predictive(t.point(0, 1))
            fd = (lpd[2] - 2 * lpd[1] + lpd[0]) / h**2
            assert abs(fd - lap) / abs(lap) < 1e-3


finite_arrays = arrays(
    np.float64,
    st.integers(min_value=1, max_value=40),
    elements=st.floats(-40.0, 40.0, allow_nan=False),
)


class TestShiftEquivariance:
    @given(ll=finite_arrays, c=st.floats(-200.0, 200.0))
    @settings(max_examples=60, deadline=None)
    def test_estimators_invariant_to_loglik_shift(self, ll, c):
        rng = np.random.default_rng(1)
        d = rng.normal(size=ll.size)
        d2 = rng.normal(size=ll.size)
        base = pe_from(ll, d, d2)
        shifted = pe_from(ll + c, d, d2)
        assert grad_log_predictive(base) == pytest.approx(
            grad_log_predictive(shifted), abs=1e-12
        )
        assert lap_log_predictive(base) == pytest.approx(
            lap_log_predictive(shifted), abs=1e-12
        )

    @given(c=st.floats(-100.0, 100.0))
    @settings(max_examples=30, deadline=None)
    def test_lpd_shifts_by_constant(self, c):
        rng = np.random.default_rng(2)
        ll = rng.normal(size=25)
        pe = pe_from(ll, np.zeros(25), np.zeros(25))
        pe_c = pe_from(ll + c, np.zeros(25), np.zeros(25))
        assert log_predictive_density(pe_c) == pytest.approx(
            log_predictive_density(pe) + c, abs=1e-10
        )


class TestLooReweight:
    def test_constant_loglik_equals_insample(self):
        pe = pe_from([-1.0] * 30, np.linspace(-1, 1, 30), [-0.5] * 30)
        loo = loo_reweight(pe)
        assert grad_log_predictive(loo) == pytest.approx(
            grad_log_predictive(pe), abs=1e-12
        )
        assert log_predictive_density(loo) == pytest.approx(
            log_predictive_density(pe), abs=1e-12
        )

    def test_conjugate_loo_oracle(self, fitted_pair, scenario1_train):
        # Exact leave-one-out: refit the conjugate posterior on n-1 points.
        data = scenario1_train
        t = build_eval_tensor([fitted_pair[0]], data)
        total = data.sum()
        s2_loo = 1.0 / (1.0 / V0 + data.size - 1)
        pv = 1.0 + s2_loo
        for i in range(0, data.size, 23):
            mu_loo = s2_loo * (total - data[i])
            loo = loo_reweight(t.point(0, i))
            g = grad_log_predictive(loo)
            lam = loo.logweights + loo.loglik
            se = snis_se_mean(lam, loo.dloglik, g)
            assert abs(g - (-(data[i] - mu_loo) / pv)) < max(4.0 * se, 1e-8)
            lpd = log_predictive_density(loo)
            assert lpd == pytest.approx(normal_logpdf(data[i], mu_loo, pv), abs=5e-3)

    def test_insample_lpd_never_below_loo(self, pair_tensor):
        # Arithmetic vs (smoothed) harmonic mean: exact inequality.
        for k in range(2):
            for i in range(pair_tensor.n_points):
                pe = pair_tensor.point(k, i)
                assert log_predictive_density(pe) >= log_predictive_density(
                    loo_reweight(pe)
                )

    def test_degenerate_weights_flagged(self):
        ll = np.zeros(30)
        ll[0] = -50.0  # one draw dominates the reciprocal weights
        pe = pe_from(ll, np.zeros(30), np.zeros(30))
        with pytest.warns(DegenerateWeightsWarning):
            loo_reweight(pe)

    def test_pareto_k_attached(self, pair_tensor):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            loo = loo_reweight(pair_tensor.point(0, 0))
        assert loo.pareto_k is not None


class TestPluginLaplacian:
    def test_plugin_is_plain_mean_insample(self):
        rng = np.random.default_rng(3)
        pe = pe_from(rng.normal(size=40), rng.normal(size=40), rng.normal(size=40))
        assert lap_log_predictive(pe, plugin=True) == pytest.approx(
            pe.d2loglik.mean(), abs=1e-14
        )

    def test_plugin_differs_from_weighted(self, pair_tensor):
        pe = pair_tensor.point(0, 0)
        assert lap_log_predictive(pe, plugin=True) != pytest.approx(
            lap_log_predictive(pe), abs=1e-9
        )

    def test_plugin_equals_weighted_for_location_family(self):
        # When dloglik is draw-independent the variance correction vanishes
        # only if weights agree too; with a single draw both always agree.
        pe = pe_from([-1.0], [0.3], [-0.7])
        assert lap_log_predictive(pe, plugin=True) == pytest.approx(
            lap_log_predictive(pe), abs=1e-14
        )


def test_score_table_matches_pointwise_path(pair_tensor):
    table = score_table(pair_tensor, loo=False)
    for k in range(2):
        for i in (0, 5, 11):
            pe = pair_tensor.point(k, i)
            assert table.grad[i, k] == pytest.approx(grad_log_predictive(pe), abs=1e-13)
            assert table.lap[i, k] == pytest.approx(lap_log_predictive(pe), abs=1e-13)
            assert table.lpd[i, k] == pytest.approx(log_predictive_density(pe), abs=1e-13)


def test_score_table_loo_matches_loo_reweight(pair_tensor):
    table = score_table(pair_tensor, loo=True)
    for k in range(2):
        for i in (2, 7):
            loo = loo_reweight(pair_tensor.point(k, i))
            assert table.grad[i, k] == pytest.approx(grad_log_predictive(loo), abs=1e-12)
            assert table.pareto_k[i, k] == pytest.approx(loo.pareto_k, abs=1e-12)
