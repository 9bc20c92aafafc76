"""Pareto-smoothed importance weights.

Stabilizes heavy-tailed self-normalized importance weights by fitting a
generalized Pareto distribution (GPD) to the largest weights and replacing
them with expected order statistics, truncated at the raw maximum.  The
fitted shape parameter ``k_hat`` doubles as a reliability diagnostic:
values above :data:`KHAT_THRESHOLD` indicate the weight distribution has
(near-)infinite variance and downstream estimates should not be trusted.

The tail fit uses the Zhang--Stephens profile-likelihood estimator
(Technometrics 2009) with the small-sample prior regularization that is
standard in PSIS implementations.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

# Below this many weights there is no meaningful tail to fit.
MIN_TAIL_INPUT = 25

# Diagnostic threshold: k_hat above this means unreliable estimates.
KHAT_THRESHOLD = 0.7

# Sentinel k_hat for degenerate (all-equal) weight vectors.
KHAT_DEGENERATE = -np.inf


class SmoothedWeights(NamedTuple):
    logweights: np.ndarray
    pareto_k: float


def fit_generalized_pareto(x: np.ndarray) -> tuple[float, float]:
    """Fit a GPD (location 0) to positive excesses ``x``.

    Zhang--Stephens posterior-mean estimator over a grid of candidate
    inverse-scale values, followed by the usual weak prior pull of
    ``k_hat`` toward 0.5.

    Returns
    -------
    (k_hat, sigma_hat)
    """
    y = np.asarray(x, dtype=float)
    y = np.sort(y[y > 0])
    n = y.size
    if n < 5:
        return KHAT_DEGENERATE, 1e-30
    m = 30 + int(np.sqrt(n))
    b = 1.0 - np.sqrt(m / (np.arange(1, m + 1) - 0.5))
    with np.errstate(over="ignore"):  # inf candidates are filtered below
        b = b / (3.0 * y[max((n - 2) // 4, 0)]) + 1.0 / y[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.log1p(-b[:, None] * y).mean(axis=1)
        # Profile log-likelihood of each candidate b.
        loglik = n * (np.log(-b / k) - k - 1.0)
    ok = np.isfinite(loglik)
    if not ok.any():
        return KHAT_DEGENERATE, 1e-30
    b, k, loglik = b[ok], k[ok], loglik[ok]
    with np.errstate(over="ignore"):  # exp -> inf means weight -> 0, as intended
        weights = 1.0 / np.exp(loglik - loglik[:, None]).sum(axis=1)
    b_post = np.sum(b * weights)
    k_post = np.log1p(-b_post * y).mean()
    sigma_hat = -k_post / b_post
    k_hat = (n * k_post + 10 * 0.5) / (n + 10)
    return float(k_hat), float(sigma_hat)


def _gpd_quantile(u: np.ndarray, k: float, sigma: float) -> np.ndarray:
    """Quantile function of the GPD with location 0."""
    if abs(k) < 1e-12:
        return -sigma * np.log1p(-u)
    return sigma / k * (np.power(1.0 - u, -k) - 1.0)


def tail_length(n: int) -> int:
    """Number of weights treated as the tail: ceil(min(0.2*n, 3*sqrt(n)))."""
    return int(np.ceil(min(0.2 * n, 3.0 * np.sqrt(n))))


def psis_fit(logweights: np.ndarray) -> SmoothedWeights:
    """Pareto-smooth a vector of unnormalized log importance weights.

    The largest ``tail_length(S)`` weights are replaced by expected order
    statistics of a fitted GPD, truncated at the raw maximum.  Weights are
    smoothed on the linear scale relative to the maximum, so any common
    additive constant in ``logweights`` is irrelevant.

    Inputs shorter than :data:`MIN_TAIL_INPUT` are returned unsmoothed with
    ``pareto_k = nan`` (not estimable).  Degenerate all-equal inputs are
    returned unsmoothed with ``pareto_k = -inf``.
    """
    lw = np.asarray(logweights, dtype=float)
    if lw.ndim != 1:
        raise ValueError("logweights must be one-dimensional")
    if not np.all(np.isfinite(lw)):
        raise ValueError("logweights must be finite")
    s = lw.size
    if s < MIN_TAIL_INPUT:
        return SmoothedWeights(lw.copy(), np.nan)

    lw_max = lw.max()
    w = np.exp(lw - lw_max)
    m = tail_length(s)
    order = np.argsort(w, kind="stable")
    tail_idx = order[-m:]
    cutoff = w[order[-m - 1]]
    excess = w[tail_idx] - cutoff
    if np.all(excess <= 0.0):
        # All tail weights tie with the cutoff: nothing to smooth.
        return SmoothedWeights(lw.copy(), KHAT_DEGENERATE)

    k_hat, sigma = fit_generalized_pareto(excess)
    if not np.isfinite(k_hat) or sigma <= 0:
        return SmoothedWeights(lw.copy(), KHAT_DEGENERATE)

    # Expected order statistics at plotting positions, rank-matched to the
    # raw tail so the weight/likelihood anti-monotonicity is preserved.
    u = (np.arange(1, m + 1) - 0.5) / m
    smoothed = cutoff + _gpd_quantile(u, k_hat, sigma)
    smoothed = np.minimum(smoothed, w.max())
    out = lw.copy()  # non-tail weights pass through untouched
    out[tail_idx] = np.log(smoothed) + lw_max  # tail_idx ascends in weight
    return SmoothedWeights(out, float(k_hat))
