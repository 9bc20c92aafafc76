"""Comparison combiners: selection, averaging, stacking, and test scoring.

Implements the standard alternatives the pooled combiners are benchmarked
against -- marginal-likelihood selection, Bayesian model averaging,
LOO-elpd selection, log-score stacking, and Hyvarinen-score selection --
plus the shared test-set evaluation that scores any fitted combination on
held-out data by log predictive density and total Hyvarinen score.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .estimators import ScoreTable, log_predictive_density, loo_reweight, score_table
from .optimize import mirror_descent
from .pooling import (
    GridDensity,
    QuackCoefficients,
    QuackParams,
    SimplexWeights,
    grid_bounds,
    predictive_grid,
    quacking_scores,
)
from .psis import KHAT_THRESHOLD
from .tensor import EvalTensor, PointEvaluations, build_eval_tensor

__all__ = [
    "METHODS",
    "SELECTION_METHODS",
    "MethodReport",
    "LooElpd",
    "bma_weights",
    "loo_elpd",
    "stacking_weights",
    "hyva_select",
    "evaluate_on_test",
]

METHODS = (
    "ml_select",
    "bma",
    "loo_select",
    "stacking",
    "hyva_select",
    "locking",
    "quacking",
)
SELECTION_METHODS = ("ml_select", "loo_select", "hyva_select")


@dataclass(frozen=True)
class MethodReport:
    """Fitted weights and test scores for one method on one dataset."""

    method: str
    weights: SimplexWeights | QuackParams
    test_log_score: float
    test_hyva_score: float

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.method in SELECTION_METHODS:
            w = self.weights.w
            if not (np.isclose(w.max(), 1.0) and np.isclose(w.sum(), 1.0)):
                raise ValueError("selection methods must carry one-hot weights")

    def weight_vector(self) -> np.ndarray:
        """K-vector summarizing the fit (geometric exponents for quacking)."""
        if isinstance(self.weights, QuackParams):
            return self.weights.w[1:]
        return self.weights.w


@dataclass(frozen=True)
class LooElpd:
    """Leave-one-out expected log predictive density for one model."""

    total: float
    pointwise: np.ndarray
    pareto_k: np.ndarray

    @property
    def n_high_k(self) -> int:
        return int(np.sum(self.pareto_k > KHAT_THRESHOLD))


def bma_weights(log_marginals) -> SimplexWeights:
    """Posterior model probabilities under equal prior odds."""
    lm = np.asarray(log_marginals, dtype=float).ravel()
    if not np.all(np.isfinite(lm)):
        raise ValueError("log marginal likelihoods must be finite")
    z = np.exp(lm - lm.max())
    return SimplexWeights(z / z.sum())


def loo_elpd(pe_list: Sequence[PointEvaluations], smooth: bool = True) -> LooElpd:
    """Sum of leave-one-out log predictive densities for one model.

    Each point is reweighted by reciprocal likelihood (Pareto-smoothed by
    default); points whose fitted tail shape exceeds the 0.7 threshold are
    counted in the returned diagnostics rather than raised.
    """
    pointwise = np.empty(len(pe_list))
    ks = np.full(len(pe_list), np.nan)
    for i, pe in enumerate(pe_list):
        loo_pe = loo_reweight(pe, smooth=smooth)
        pointwise[i] = log_predictive_density(loo_pe)
        if loo_pe.pareto_k is not None:
            ks[i] = loo_pe.pareto_k
    return LooElpd(float(pointwise.sum()), pointwise, ks)


def stacking_weights(
    loo_lpd: np.ndarray, tol: float = 1e-10, max_iter: int = 20000
) -> SimplexWeights:
    """Maximize the stacked LOO log score over the simplex.

    The objective sum_i log(sum_k w_k exp(lpd_ik)) is concave, so the same
    mirror-descent engine used for the Hyvarinen fit applies.  Exactly
    identical columns short-circuit to the uniform tie-break.
    """
    lpd = np.asarray(loo_lpd, dtype=float)
    if lpd.ndim != 2 or not np.all(np.isfinite(lpd)):
        raise ValueError("loo_lpd must be a finite (n, K) matrix")
    n, k = lpd.shape
    if k == 1:
        return SimplexWeights(np.ones(1))
    if np.all(lpd == lpd[:, :1]):
        return SimplexWeights.uniform(k)
    shift = lpd.max(axis=1, keepdims=True)
    p = np.exp(lpd - shift)  # (n, K), rows scaled to max 1

    def value_and_grad(w: np.ndarray) -> tuple[float, np.ndarray]:
        mix = p @ w
        return -float(np.log(mix).sum()), -(p.T @ (1.0 / mix))

    res = mirror_descent(value_and_grad, k, tol=tol, max_iter=max_iter)
    return res.weights


def hyva_select(score_totals) -> int:
    """Pick the model with the lowest summed Hyvarinen score.

    Accepts a length-K vector of totals or a ScoreTable (columns summed);
    ties break toward the lowest index.
    """
    if isinstance(score_totals, ScoreTable):
        totals = score_totals.hyva.sum(axis=0)
    else:
        totals = np.asarray(score_totals, dtype=float).ravel()
    return int(np.argmin(totals))


# ---------------------------------------------------------------------------
# Test-set evaluation
# ---------------------------------------------------------------------------


def _mixture_hyva(table: ScoreTable, w: np.ndarray) -> float:
    """Total Hyvarinen score of the linear mixture sum_k w_k pi_k."""
    qc = QuackCoefficients(table.lpd, table.grad, table.lap)
    params = QuackParams(SimplexWeights.normalized(w), np.concatenate([[1.0], np.zeros(len(w))]))
    q1, q2 = quacking_scores(qc, params)
    return float(np.sum(2.0 * q2 + q1**2))


def _component_grids(models, values, grid_m: int, pad_sds: float) -> list[GridDensity]:
    lo, hi = grid_bounds(values, pad_sds)
    return [predictive_grid(m, lo, hi, grid_m) for m in models]


def evaluate_on_test(
    weights,
    method: str,
    test_data,
    models,
    *,
    test_tensor: EvalTensor | None = None,
    test_table: ScoreTable | None = None,
    component_grids: Sequence[GridDensity] | None = None,
    grid_m: int = 4001,
    pad_sds: float = 5.0,
) -> MethodReport:
    """Score a fitted combination on held-out data.

    Linear combinations (selection one-hots, BMA, stacking) evaluate the
    mixture directly.  Locking and quacking are unnormalized, so their log
    scores subtract a normalizing constant obtained by trapezoid
    quadrature of the combined density on a shared grid; if the grid fails
    to cover the test range it is extended once and rebuilt.

    Pass ``test_tensor``/``test_table``/``component_grids`` to share one
    set of draws across all methods of a replication.
    """
    y = np.asarray(test_data, dtype=float).ravel()
    if test_tensor is None:
        test_tensor = build_eval_tensor(models, y)
    if test_table is None:
        test_table = score_table(test_tensor, loo=False)
    lpd = test_table.lpd  # (n_test, K)

    if isinstance(weights, QuackParams):
        wk = weights.w[1:]
    else:
        wk = np.asarray(weights.w if isinstance(weights, SimplexWeights) else weights,
                        dtype=float)

    if method in ("locking", "quacking"):
        grids = list(component_grids) if component_grids else _component_grids(
            models, y, grid_m, pad_sds
        )
        if y.min() < grids[0].lo or y.max() > grids[0].hi:
            lo, hi = grid_bounds(np.concatenate([[grids[0].lo, grids[0].hi], y]), pad_sds)
            grids = [predictive_grid(m, lo, hi, grid_m) for m in models]

    if method == "locking":
        locked = GridDensity(
            grids[0].lo, grids[0].hi,
            np.stack([g.logvals for g in grids]).T @ wk,
        )
        log_z = locked.log_integral()
        log_score = float((lpd @ wk).sum() - y.size * log_z)
        q1, q2 = test_table.grad @ wk, test_table.lap @ wk
        hyva = float(np.sum(2.0 * q2 + q1**2))
        return MethodReport(method, weights, log_score, hyva)

    if method == "quacking":
        beta = weights.beta.w
        w0 = weights.w0
        stack = np.stack([g.logvals for g in grids])  # (K, m)
        with np.errstate(divide="ignore"):
            logb = np.log(beta)[:, None]
        shift = (stack + logb).max(axis=0)
        mix = np.log(np.exp(stack + logb - shift).sum(axis=0)) + shift
        combined = GridDensity(grids[0].lo, grids[0].hi, w0 * mix + stack.T @ wk)
        log_z = combined.log_integral()
        with np.errstate(divide="ignore"):
            lmix = np.log(beta)[None, :] + lpd
        pshift = lmix.max(axis=1)
        mix_pts = np.log(np.exp(lmix - pshift[:, None]).sum(axis=1)) + pshift
        log_score = float(np.sum(w0 * mix_pts + lpd @ wk) - y.size * log_z)
        qc = QuackCoefficients(test_table.lpd, test_table.grad, test_table.lap)
        q1, q2 = quacking_scores(qc, weights)
        hyva = float(np.sum(2.0 * q2 + q1**2))
        return MethodReport(method, weights, log_score, hyva)

    # Linear mixture (selection methods are one-hot mixtures).
    with np.errstate(divide="ignore"):
        logw = np.log(wk)[None, :]
    shift = (lpd + logw).max(axis=1)
    log_score = float(np.sum(np.log(np.exp(lpd + logw - shift[:, None]).sum(axis=1)) + shift))
    hyva = _mixture_hyva(test_table, wk)
    return MethodReport(method, SimplexWeights(wk), log_score, hyva)
