"""Importance-weighted estimators of predictive score functions.

A model's posterior predictive density pi(y) = E_theta[f(y|theta)] is only
available through draws, so its score functions are estimated by
self-normalized importance sampling over the stored log-likelihood
derivatives.  With per-draw log weights lam_s (= loglik for in-sample
weighting, or smoothed LOO weights plus loglik for leave-one-out):

    grad  = sum_s w_s * dloglik_s                   with w_s = softmax(lam)_s
    lap   = sum_s w_s * (d2loglik_s + dloglik_s^2) - grad^2
    hyva  = 2 * lap + grad^2

which are the stabilized forms of sum f' / sum f and sum f'' / sum f - g^2,
using f' = f*dlog and f'' = f*(d2log + dlog^2).  All sums are log-sum-exp
shifted, so adding any constant to loglik changes nothing.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .psis import psis_fit
from .tensor import EvalTensor, PointEvaluations

__all__ = [
    "ScoreEstimate",
    "ScoreTable",
    "DegenerateWeightsWarning",
    "grad_log_predictive",
    "lap_log_predictive",
    "hyvarinen_point",
    "log_predictive_density",
    "loo_reweight",
    "score_table",
]

# ESS below 1 + eps means the weights sit on a single draw.
_ESS_DEGENERATE_EPS = 1e-3


class DegenerateWeightsWarning(UserWarning):
    """Importance weights concentrated on (almost) a single draw."""


@dataclass(frozen=True)
class ScoreEstimate:
    """Estimated score functions of one predictive density at one point."""

    grad: float
    lap: float
    hyva: float
    ess: float
    pareto_k: float | None = None


def _combined_logweights(pe: PointEvaluations) -> np.ndarray:
    if pe.logweights is None:
        return pe.loglik
    return pe.logweights + pe.loglik


def _rows_stats(
    loglik: np.ndarray,
    dloglik: np.ndarray,
    d2loglik: np.ndarray,
    logweights: np.ndarray | None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise (grad, lap, lpd, ess) for (n, S) blocks; single code path
    shared by the per-point API and the vectorized table builder."""
    lam = loglik if logweights is None else logweights + loglik
    shift = lam.max(axis=-1, keepdims=True)
    w = np.exp(lam - shift)
    wsum = w.sum(axis=-1)
    grad = (w * dloglik).sum(axis=-1) / wsum
    h2 = (w * (d2loglik + dloglik**2)).sum(axis=-1) / wsum
    lap = h2 - grad**2
    ess = wsum**2 / (w**2).sum(axis=-1)
    # log pi(y) = lse(logweights + loglik) - lse(logweights)
    lpd = np.log(wsum) + shift.squeeze(-1)
    if logweights is None:
        lpd = lpd - np.log(loglik.shape[-1])
    else:
        ws = logweights.max(axis=-1, keepdims=True)
        lpd = lpd - (np.log(np.exp(logweights - ws).sum(axis=-1)) + ws.squeeze(-1))
    return grad, lap, lpd, ess


def _point_stats(pe: PointEvaluations):
    g, l, lpd, ess = _rows_stats(
        pe.loglik[None, :],
        pe.dloglik[None, :],
        pe.d2loglik[None, :],
        None if pe.logweights is None else pe.logweights[None, :],
    )
    return float(g[0]), float(l[0]), float(lpd[0]), float(ess[0])


def grad_log_predictive(pe: PointEvaluations) -> float:
    """Estimate d/dy log pi(y): softmax-weighted mean of dloglik."""
    return _point_stats(pe)[0]


def lap_log_predictive(pe: PointEvaluations, plugin: bool = False) -> float:
    """Estimate d^2/dy^2 log pi(y).

    Default is the importance-weighted estimator (weighted mean of
    d2loglik + dloglik^2, minus grad^2).  ``plugin=True`` instead returns
    the posterior-mean plug-in of d2loglik alone, i.e. the cruder
    approximation that treats the predictive as if log-mean and
    mean-of-log commuted; kept for comparison.
    """
    if plugin:
        if pe.logweights is None:
            return float(pe.d2loglik.mean())
        w = np.exp(pe.logweights - pe.logweights.max())
        return float((w * pe.d2loglik).sum() / w.sum())
    return _point_stats(pe)[1]


def hyvarinen_point(pe: PointEvaluations) -> ScoreEstimate:
    """Estimate the Hyvarinen score 2*lap + grad^2 at one point."""
    g, l, _, ess = _point_stats(pe)
    return ScoreEstimate(
        grad=g, lap=l, hyva=2.0 * l + g * g, ess=ess, pareto_k=pe.pareto_k
    )


def log_predictive_density(pe: PointEvaluations) -> float:
    """Estimate log pi(y); log-mean-exp of loglik under the attached weights."""
    return _point_stats(pe)[2]


def loo_reweight(pe: PointEvaluations, smooth: bool = True) -> PointEvaluations:
    """Attach leave-one-out weights (log 1/f per draw) to a point.

    Downstream estimators fold these into the self-normalized sums, which
    removes the point from its own predictive fit.  Weights are
    Pareto-smoothed by default; the fitted tail shape lands in
    ``pareto_k``.  Near-degenerate weights are flagged with a warning, not
    an error.
    """
    raw = -pe.loglik
    if smooth:
        lw, k_hat = psis_fit(raw)
    else:
        lw, k_hat = raw, None
    w = np.exp(lw - lw.max())
    ess = w.sum() ** 2 / (w**2).sum()
    if ess < 1.0 + _ESS_DEGENERATE_EPS and pe.n_draws > 1:
        warnings.warn(
            f"LOO weights for model {pe.model_id!r}, point {pe.point_id} "
            f"concentrate on one draw (ess={ess:.3f})",
            DegenerateWeightsWarning,
            stacklevel=2,
        )
    k = None if k_hat is None or not np.isfinite(k_hat) else float(k_hat)
    return PointEvaluations(
        pe.model_id, pe.point_id, pe.loglik, pe.dloglik, pe.d2loglik,
        logweights=lw, pareto_k=k,
    )


# ---------------------------------------------------------------------------
# Vectorized table over a whole tensor
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoreTable:
    """Score-function estimates for every (point i, model k).

    All arrays are (n, K).  ``pareto_k`` is NaN where no tail was fitted
    (in-sample weighting, short draw vectors, or degenerate weights).
    """

    model_ids: list[str]
    grad: np.ndarray
    lap: np.ndarray
    lpd: np.ndarray
    ess: np.ndarray
    pareto_k: np.ndarray
    loo: bool

    @property
    def hyva(self) -> np.ndarray:
        return 2.0 * self.lap + self.grad**2

    @property
    def n_points(self) -> int:
        return self.grad.shape[0]

    @property
    def n_models(self) -> int:
        return self.grad.shape[1]


def score_table(
    tensor: EvalTensor,
    loo: bool = False,
    smooth: bool = True,
    plugin: bool = False,
) -> ScoreTable:
    """Compute per-(point, model) score estimates over the whole tensor.

    With ``loo=True`` every point is reweighted by its reciprocal
    likelihood (Pareto-smoothed unless ``smooth=False``) so the estimates
    approximate leave-one-out quantities.  ``plugin=True`` replaces the
    importance-weighted Laplacian with the plug-in mean of d2loglik.
    """
    n, big_k = tensor.n_points, tensor.n_models
    grad = np.empty((n, big_k))
    lap = np.empty((n, big_k))
    lpd = np.empty((n, big_k))
    ess = np.empty((n, big_k))
    pk = np.full((n, big_k), np.nan)
    for k, block in enumerate(tensor.blocks):
        if loo:
            lw = np.empty_like(block.loglik)
            for i in range(n):
                if smooth:
                    lw_i, k_hat = psis_fit(-block.loglik[i])
                else:
                    lw_i, k_hat = -block.loglik[i], np.nan
                lw[i] = lw_i
                pk[i, k] = k_hat
        else:
            lw = None
        g, l, d, e = _rows_stats(block.loglik, block.dloglik, block.d2loglik, lw)
        if plugin:
            if lw is None:
                l = block.d2loglik.mean(axis=-1)
            else:
                w = np.exp(lw - lw.max(axis=-1, keepdims=True))
                l = (w * block.d2loglik).sum(axis=-1) / w.sum(axis=-1)
        grad[:, k], lap[:, k], lpd[:, k], ess[:, k] = g, l, d, e
    return ScoreTable(tensor.model_ids, grad, lap, lpd, ess, pk, loo)
