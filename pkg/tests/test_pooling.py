"""Combination operators: coefficient-level scores and grid densities."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scorepool.models import m1_posterior
from scorepool.pooling import (
    GridDensity,
    ObjectiveCoefficients,
    QuackCoefficients,
    QuackParams,
    SimplexWeights,
    hyva_objective,
    hyva_objective_grad,
    locking_grid,
    locking_scores,
    mixture_grid,
    objective_coefficients,
    quack_coefficients,
    quack_objective,
    quacking_scores,
    superposition_grid,
)
from scorepool.tensor import build_eval_tensor

from conftest import conjugate_m1

LOG_2PI = math.log(2.0 * math.pi)


def normal_grid(mu, sd, lo, hi, m=2001):
    ys = np.linspace(lo, hi, m)
    logvals = -0.5 * LOG_2PI - math.log(sd) - 0.5 * ((ys - mu) / sd) ** 2
    return GridDensity(lo, hi, logvals).normalize()


class TestSimplexWeights:
    def test_validation(self):
        with pytest.raises(ValueError):
            SimplexWeights([0.5, 0.6])
        with pytest.raises(ValueError):
            SimplexWeights([-0.1, 1.1])
        assert SimplexWeights.uniform(4).w.sum() == pytest.approx(1.0)
        assert SimplexWeights.vertex(3, 1).w.tolist() == [0.0, 1.0, 0.0]

    def test_quack_params_shape(self):
        beta = SimplexWeights.uniform(2)
        with pytest.raises(ValueError):
            QuackParams(beta, [0.0, 1.0])  # needs K+1 entries
        p = QuackParams(beta, [0.5, 0.3, 0.2])
        assert p.w0 == 0.5


class TestObjectiveCoefficients:
    def test_single_model_verbatim(self, fitted_pair, scenario1_train):
        t1 = build_eval_tensor([fitted_pair[0]], scenario1_train[:15])
        both = build_eval_tensor(list(fitted_pair), scenario1_train[:15])
        c1 = objective_coefficients(t1, loo=False)
        c2 = objective_coefficients(both, loo=False)
        np.testing.assert_allclose(c1.a[:, 0], c2.a[:, 0], atol=1e-13)
        np.testing.assert_allclose(c1.b[:, 0], c2.b[:, 0], atol=1e-13)

    def test_identical_models_identical_columns(self, scenario1_train):
        m = m1_posterior(scenario1_train, n_draws=200, seed=9)
        t = build_eval_tensor([m, m], scenario1_train[:10])
        c = objective_coefficients(t, loo=True)
        np.testing.assert_array_equal(c.a[:, 0], c.a[:, 1])
        np.testing.assert_array_equal(c.b[:, 0], c.b[:, 1])

    def test_m1_column_matches_closed_form(self, fitted_pair, scenario1_train):
        mu_n, s2 = conjugate_m1(scenario1_train)
        pv = 1.0 + s2
        t = build_eval_tensor([fitted_pair[0]], scenario1_train[:25])
        c = objective_coefficients(t, loo=False)
        oracle = -(scenario1_train[:25] - mu_n) / pv
        np.testing.assert_allclose(c.a[:, 0], oracle, atol=5e-3)
        np.testing.assert_allclose(c.b[:, 0], -1.0 / pv, atol=5e-3)


class TestLockingScores:
    def test_vertex_returns_column(self):
        rng = np.random.default_rng(0)
        c = ObjectiveCoefficients(rng.normal(size=(6, 3)), rng.normal(size=(6, 3)))
        q1, q2 = locking_scores(c, SimplexWeights.vertex(3, 2))
        np.testing.assert_array_equal(q1, c.a[:, 2])
        np.testing.assert_array_equal(q2, c.b[:, 2])

    def test_symmetric_cancellation(self):
        c = ObjectiveCoefficients(np.array([[2.0, -2.0]]), np.zeros((1, 2)))
        q1, _ = locking_scores(c, [0.5, 0.5])
        assert q1[0] == pytest.approx(0.0, abs=1e-15)

    def test_two_gaussian_closed_form(self):
        # Locked N(m1,v1)^w N(m2,v2)^(1-w) is Gaussian with precision
        # w/v1 + (1-w)/v2; scores must match its derivatives exactly.
        m = np.array([-1.0, 2.0])
        v = np.array([1.5, 0.7])
        ys = np.linspace(-3, 4, 9)
        a = np.stack([-(ys - m[k]) / v[k] for k in range(2)], axis=1)
        b = np.stack([np.full(ys.size, -1.0 / v[k]) for k in range(2)], axis=1)
        c = ObjectiveCoefficients(a, b)
        w = np.array([0.35, 0.65])
        prec = w[0] / v[0] + w[1] / v[1]
        mean = (w[0] * m[0] / v[0] + w[1] * m[1] / v[1]) / prec
        q1, q2 = locking_scores(c, w)
        np.testing.assert_allclose(q1, -(ys - mean) * prec, atol=1e-12)
        np.testing.assert_allclose(q2, -prec, atol=1e-12)

    @given(lam=st.floats(0.0, 1.0))
    @settings(max_examples=40, deadline=None)
    def test_linearity_in_weights(self, lam):
        rng = np.random.default_rng(4)
        c = ObjectiveCoefficients(rng.normal(size=(8, 3)), rng.normal(size=(8, 3)))
        w = np.array([0.2, 0.5, 0.3])
        u = np.array([0.6, 0.1, 0.3])
        mix = lam * w + (1 - lam) * u
        q1_mix, q2_mix = locking_scores(c, mix)
        q1_w, q2_w = locking_scores(c, w)
        q1_u, q2_u = locking_scores(c, u)
        np.testing.assert_allclose(q1_mix, lam * q1_w + (1 - lam) * q1_u, atol=1e-12)
        np.testing.assert_allclose(q2_mix, lam * q2_w + (1 - lam) * q2_u, atol=1e-12)


class TestHyvaObjective:
    def test_single_model_is_total_score(self, pair_tensor):
        c = objective_coefficients(pair_tensor, loo=False)
        c1 = ObjectiveCoefficients(c.a[:, :1], c.b[:, :1])
        total = float(np.sum(2.0 * c.b[:, 0] + c.a[:, 0] ** 2))
        assert hyva_objective(c1, [1.0]) == pytest.approx(total, rel=1e-12)

    def test_flat_prior_drops_barrier(self):
        rng = np.random.default_rng(1)
        c = ObjectiveCoefficients(rng.normal(size=(5, 2)), rng.normal(size=(5, 2)))
        w = [0.3, 0.7]
        score = hyva_objective(c, w, alpha=1.0)
        assert hyva_objective(c, w, alpha=1.01) == pytest.approx(
            score - 0.01 * np.log(w).sum(), rel=1e-12
        )

    def test_boundary_is_infinite(self):
        c = ObjectiveCoefficients(np.zeros((3, 2)), np.zeros((3, 2)))
        assert hyva_objective(c, [1.0, 0.0], alpha=1.01) == np.inf
        assert np.isfinite(hyva_objective(c, [1.0, 0.0], alpha=1.0))

    def test_convex_along_segments(self):
        rng = np.random.default_rng(2)
        c = ObjectiveCoefficients(rng.normal(size=(30, 2)), rng.normal(size=(30, 2)))
        lams = np.linspace(0.05, 0.95, 41)
        vals = np.array([hyva_objective(c, [l, 1 - l], alpha=1.01) for l in lams])
        second = vals[2:] - 2 * vals[1:-1] + vals[:-2]
        assert np.all(second >= -1e-9)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        c = ObjectiveCoefficients(rng.normal(size=(20, 3)), rng.normal(size=(20, 3)))
        w = np.array([0.3, 0.45, 0.25])
        g = hyva_objective_grad(c, w, alpha=1.01)
        h = 1e-6
        for k in range(3):
            wp, wm = w.copy(), w.copy()
            wp[k] += h
            wm[k] -= h
            fd = (hyva_objective(c, wp, 1.01) - hyva_objective(c, wm, 1.01)) / (2 * h)
            assert abs(fd - g[k]) / max(abs(g[k]), 1.0) < 1e-5


class TestQuackingScores:
    def test_zero_mixture_exponent_reduces_to_locking(self, pair_tensor):
        c_in = objective_coefficients(pair_tensor, loo=False)
        qc = quack_coefficients(pair_tensor)
        w = np.array([0.4, 0.6])
        params = QuackParams(SimplexWeights.uniform(2), np.concatenate([[0.0], w]))
        q1_q, q2_q = quacking_scores(qc, params)
        q1_l, q2_l = locking_scores(c_in, w)
        np.testing.assert_allclose(q1_q, q1_l, atol=1e-12)
        np.testing.assert_allclose(q2_q, q2_l, atol=1e-12)

    def test_single_model_collapses_to_power(self, fitted_pair, scenario1_train):
        t = build_eval_tensor([fitted_pair[0]], scenario1_train[:12])
        qc = quack_coefficients(t)
        w0, w1 = 0.7, 0.6
        params = QuackParams(SimplexWeights([1.0]), [w0, w1])
        q1, q2 = quacking_scores(qc, params)
        np.testing.assert_allclose(q1, (w0 + w1) * qc.a[:, 0], atol=1e-12)
        np.testing.assert_allclose(q2, (w0 + w1) * qc.b[:, 0], atol=1e-12)

    def test_finite_difference_oracle(self, fitted_pair):
        # q(y) known pointwise up to a constant; grid finite differences of
        # log q must match the analytic scores.
        h = 1e-4
        params = QuackParams(SimplexWeights([0.3, 0.7]), [0.8, 0.5, -0.2])
        for y in (0.2, 1.1, 2.5):
            t = build_eval_tensor(list(fitted_pair), [y - h, y, y + h])
            qc = quack_coefficients(t)
            beta, wk, w0 = params.beta.w, params.w[1:], params.w0
            lq = np.array([
                w0 * np.log(beta @ np.exp(qc.lpd[i])) + qc.lpd[i] @ wk
                for i in range(3)
            ])
            q1, q2 = quacking_scores(qc, params)
            fd1 = (lq[2] - lq[0]) / (2 * h)
            fd2 = (lq[2] - 2 * lq[1] + lq[0]) / h**2
            assert abs(fd1 - q1[1]) / max(abs(q1[1]), 0.1) < 1e-4
            assert abs(fd2 - q2[1]) / max(abs(q2[1]), 0.1) < 1e-3

    def test_objective_barrier_on_beta(self, pair_tensor):
        qc = quack_coefficients(pair_tensor)
        params = QuackParams(SimplexWeights([1.0, 0.0]), [0.5, 0.2, 0.3])
        assert quack_objective(qc, params, alpha=1.01) == np.inf
        assert np.isfinite(quack_objective(qc, params, alpha=1.0))


class TestGridOperators:
    def test_normalization(self):
        g = normal_grid(0.0, 1.0, -8, 8)
        assert abs(g.log_integral()) < 1e-6

    def test_vertex_identity_all_operators(self):
        comps = [normal_grid(-1.0, 1.0, -9, 9), normal_grid(1.5, 0.6, -9, 9)]
        for op in (mixture_grid, locking_grid):
            out = op(comps, [1.0, 0.0])
            np.testing.assert_allclose(out.logvals, comps[0].logvals, atol=1e-10)
        out = superposition_grid(comps, [1.0, 0.0], [0.0, 0.0])
        np.testing.assert_allclose(out.logvals, comps[0].logvals, atol=1e-10)

    def test_identical_components_any_weights(self):
        g = normal_grid(0.3, 1.2, -8, 9)
        comps = [g, g]
        for out in (
            mixture_grid(comps, [0.25, 0.75]),
            locking_grid(comps, [0.25, 0.75]),
            superposition_grid(comps, [0.25, 0.75], [0.5, 0.5]),
        ):
            np.testing.assert_allclose(out.logvals, g.logvals, atol=1e-9)

    def test_locking_two_unit_gaussians(self):
        # N(-1,1)^.5 N(1,1)^.5 normalizes to N(0,1).
        comps = [normal_grid(-1.0, 1.0, -10, 10, 4001),
                 normal_grid(1.0, 1.0, -10, 10, 4001)]
        locked = locking_grid(comps, [0.5, 0.5])
        oracle = normal_grid(0.0, 1.0, -10, 10, 4001)
        np.testing.assert_allclose(locked.logvals, oracle.logvals, atol=1e-10)

    def test_quarter_phase_superposition_is_mixture(self):
        comps = [normal_grid(-1.5, 0.8, -10, 10), normal_grid(1.0, 1.3, -10, 10)]
        w = [0.4, 0.6]
        sup = superposition_grid(comps, w, [0.0, math.pi / 2.0])
        mix = mixture_grid(comps, w)
        np.testing.assert_allclose(
            np.exp(sup.logvals), np.exp(mix.logvals), atol=1e-12
        )

    def test_opposite_phase_cancels_between_modes(self):
        comps = [normal_grid(-2.0, 0.7, -9, 9), normal_grid(2.0, 0.7, -9, 9)]
        sup = superposition_grid(comps, [0.5, 0.5], [0.0, math.pi])
        mix = mixture_grid(comps, [0.5, 0.5])
        mid = sup.m // 2
        # Total destructive interference at the symmetry point.
        assert np.exp(sup.logvals[mid]) < 1e-12
        assert np.exp(mix.logvals[mid]) > 1e-3

    def test_grid_mismatch_rejected(self):
        a = normal_grid(0.0, 1.0, -5, 5, 101)
        b = normal_grid(0.0, 1.0, -5, 5, 103)
        with pytest.raises(ValueError, match="share the grid"):
            mixture_grid([a, b], [0.5, 0.5])

    def test_csv_emission(self, tmp_path):
        g = normal_grid(0.0, 1.0, -5, 5, 11)
        path = tmp_path / "grid.csv"
        with open(path, "w") as fh:
            g.write_csv(fh, manifest_hash="cafe")
        lines = path.read_text().splitlines()
        assert lines[0] == "# manifest: cafe"
        assert lines[1] == "y,log_density"
        assert len(lines) == 13
