"""Combination operators over predictive densities and their score functions.

Two families:

* Coefficient-level operators used by the weight optimizer.  From the
  evaluation tensor we precompute, per (point i, model k), the estimated
  score functions a[i,k] = d/dy log pi_k(y_i) and b[i,k] = d2/dy2 log
  pi_k(y_i).  Log-linear pooling ("locking") then has scores that are
  linear in the weights, so the whole Hyvarinen objective is a cheap
  quadratic plus a Dirichlet barrier.  The superposition-style hybrid
  ("quacking") multiplies a mixture factor into the geometric pool; its
  scores need the per-model predictive densities as well, but still reduce
  to O(nK) per evaluation.

* Grid-level operators used for normalization, demos, and mode checks:
  linear mixture, locking, and phase superposition on a shared uniform
  grid, each followed by trapezoid normalization.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .estimators import score_table
from .tensor import EvalTensor

__all__ = [
    "SimplexWeights",
    "QuackParams",
    "ObjectiveCoefficients",
    "QuackCoefficients",
    "GridDensity",
    "as_weight_array",
    "objective_coefficients",
    "quack_coefficients",
    "locking_scores",
    "hyva_objective",
    "hyva_objective_grad",
    "quacking_scores",
    "quack_objective",
    "mixture_grid",
    "locking_grid",
    "superposition_grid",
    "predictive_grid",
    "grid_bounds",
]

_SIMPLEX_TOL = 1e-12


@dataclass(frozen=True)
class SimplexWeights:
    """Nonnegative weights summing to one."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).ravel()
        if w.size < 1 or not np.all(np.isfinite(w)):
            raise ValueError("weights must be a non-empty finite vector")
        if w.min() < -_SIMPLEX_TOL:
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > _SIMPLEX_TOL:
            raise ValueError("weights must sum to one")
        object.__setattr__(self, "w", np.clip(w, 0.0, None))

    @classmethod
    def uniform(cls, k: int) -> "SimplexWeights":
        return cls(np.full(k, 1.0 / k))

    @classmethod
    def vertex(cls, k: int, index: int) -> "SimplexWeights":
        w = np.zeros(k)
        w[index] = 1.0
        return cls(w)

    @classmethod
    def normalized(cls, values) -> "SimplexWeights":
        v = np.asarray(values, dtype=float)
        return cls(v / v.sum())

    def __len__(self) -> int:
        return self.w.size


def as_weight_array(w, size: int | None = None) -> np.ndarray:
    """Accept SimplexWeights or any array-like; validate length."""
    arr = w.w if isinstance(w, SimplexWeights) else np.asarray(w, dtype=float).ravel()
    if size is not None and arr.size != size:
        raise ValueError(f"expected {size} weights, got {arr.size}")
    return arr


@dataclass(frozen=True)
class QuackParams:
    """Hybrid-pool parameters: simplex mixture weights beta over the K
    models plus K+1 free exponents w, with w[0] on the mixture factor."""

    beta: SimplexWeights
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).ravel()
        if w.size != len(self.beta) + 1:
            raise ValueError("w must have K+1 entries (mixture exponent first)")
        if not np.all(np.isfinite(w)):
            raise ValueError("w must be finite")
        object.__setattr__(self, "w", w)

    @property
    def w0(self) -> float:
        return float(self.w[0])


@dataclass(frozen=True)
class ObjectiveCoefficients:
    """Per-(point, model) score estimates entering the pooled objective."""

    a: np.ndarray  # (n, K): estimated d/dy log pi_k(y_i)
    b: np.ndarray  # (n, K): estimated d2/dy2 log pi_k(y_i)
    model_ids: tuple[str, ...] = ()
    loo: bool = False

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if a.shape != b.shape or a.ndim != 2:
            raise ValueError("a and b must be matching (n, K) matrices")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n_points(self) -> int:
        return self.a.shape[0]

    @property
    def n_models(self) -> int:
        return self.a.shape[1]


@dataclass(frozen=True)
class QuackCoefficients:
    """ObjectiveCoefficients plus per-(point, model) log predictive
    densities, which the hybrid pool's mixture factor needs."""

    lpd: np.ndarray
    a: np.ndarray
    b: np.ndarray
    model_ids: tuple[str, ...] = ()

    @property
    def n_models(self) -> int:
        return self.a.shape[1]


def objective_coefficients(
    tensor: EvalTensor,
    loo: bool = True,
    smooth: bool = True,
    plugin: bool = False,
) -> ObjectiveCoefficients:
    """Estimate a[i,k], b[i,k] over the tensor (LOO-reweighted by default)."""
    table = score_table(tensor, loo=loo, smooth=smooth, plugin=plugin)
    return ObjectiveCoefficients(
        table.grad, table.lap, tuple(table.model_ids), loo=loo
    )


def quack_coefficients(tensor: EvalTensor, plugin: bool = False) -> QuackCoefficients:
    """In-sample coefficients plus log predictive densities for quacking."""
    table = score_table(tensor, loo=False, plugin=plugin)
    return QuackCoefficients(table.lpd, table.grad, table.lap, tuple(table.model_ids))


def locking_scores(c: ObjectiveCoefficients, w) -> tuple[np.ndarray, np.ndarray]:
    """Score functions of the geometric pool: linear in the weights."""
    wv = as_weight_array(w, c.n_models)
    return c.a @ wv, c.b @ wv


def hyva_objective(c: ObjectiveCoefficients, w, alpha: float = 1.01) -> float:
    """Hyvarinen objective sum_i (2 q2_i + q1_i^2) plus Dirichlet barrier.

    The barrier -(alpha-1) * sum_k log w_k is the negated Dirichlet(alpha)
    log prior up to a constant; on the simplex boundary with alpha > 1 the
    objective is +inf by convention (no exception), which keeps optima
    strictly interior.
    """
    wv = as_weight_array(w, c.n_models)
    if alpha != 1.0:
        if np.any(wv <= 0.0):
            return float(np.inf)
        barrier = -(alpha - 1.0) * np.log(wv).sum()
    else:
        barrier = 0.0
    q1, q2 = c.a @ wv, c.b @ wv
    return float(np.sum(2.0 * q2 + q1**2) + barrier)


def hyva_objective_grad(c: ObjectiveCoefficients, w, alpha: float = 1.01) -> np.ndarray:
    """Analytic gradient: sum_i (2 b[i,k] + 2 q1_i a[i,k]) - (alpha-1)/w_k."""
    wv = as_weight_array(w, c.n_models)
    q1 = c.a @ wv
    grad = 2.0 * c.b.sum(axis=0) + 2.0 * (c.a.T @ q1)
    if alpha != 1.0:
        with np.errstate(divide="ignore"):
            grad = grad - (alpha - 1.0) / wv
    return grad


def quacking_scores(
    source: EvalTensor | QuackCoefficients, params: QuackParams
) -> tuple[np.ndarray, np.ndarray]:
    """Score functions of the hybrid pool (mixture^w0 times geometric pool).

    q1_i = w0 * mixgrad_i + sum_k w_k a[i,k]
    q2_i = w0 * (mixcurv_i - mixgrad_i^2) + sum_k w_k b[i,k]

    where mixgrad and mixcurv are the density-weighted averages of the
    per-model score estimates under weights beta_k * pi_k(y_i); everything
    is computed from log quantities with a per-point shift.
    """
    c = source if isinstance(source, QuackCoefficients) else quack_coefficients(source)
    beta = as_weight_array(params.beta, c.n_models)
    w0, wk = params.w0, params.w[1:]
    with np.errstate(divide="ignore"):
        logu = np.log(beta)[None, :] + c.lpd
    shift = logu.max(axis=1, keepdims=True)
    u = np.exp(logu - shift)
    usum = u.sum(axis=1)
    mixgrad = (u * c.a).sum(axis=1) / usum
    mixcurv = (u * (c.b + c.a**2)).sum(axis=1) / usum
    q1 = w0 * mixgrad + c.a @ wk
    q2 = w0 * (mixcurv - mixgrad**2) + c.b @ wk
    return q1, q2


def quack_objective(
    source: EvalTensor | QuackCoefficients, params: QuackParams, alpha: float = 1.01
) -> float:
    """Hyvarinen objective of the hybrid pool, with the Dirichlet barrier
    on the simplex-constrained mixture weights beta."""
    beta = as_weight_array(params.beta)
    if alpha != 1.0:
        if np.any(beta <= 0.0):
            return float(np.inf)
        barrier = -(alpha - 1.0) * np.log(beta).sum()
    else:
        barrier = 0.0
    q1, q2 = quacking_scores(source, params)
    return float(np.sum(2.0 * q2 + q1**2) + barrier)


# ---------------------------------------------------------------------------
# Grid densities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridDensity:
    """Log-density values on a uniform 1-D grid."""

    lo: float
    hi: float
    logvals: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("hi must exceed lo")
        v = np.asarray(self.logvals, dtype=float).ravel()
        if v.size < 2:
            raise ValueError("grid needs at least two points")
        if np.any(np.isnan(v)) or np.any(v == np.inf):
            raise ValueError("log densities must be < inf and not NaN")
        object.__setattr__(self, "logvals", v)

    @property
    def m(self) -> int:
        return self.logvals.size

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / (self.m - 1)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.m)

    def log_integral(self) -> float:
        """Log of the trapezoid integral of exp(logvals)."""
        shift = self.logvals.max()
        vals = np.exp(self.logvals - shift)
        return float(shift + np.log(np.trapezoid(vals, dx=self.step)))

    def normalize(self) -> "GridDensity":
        return GridDensity(
            self.lo, self.hi, self.logvals - self.log_integral(), normalized=True
        )

    def mode(self) -> float:
        return float(self.ys[int(np.argmax(self.logvals))])

    def same_grid(self, other: "GridDensity") -> bool:
        return (
            self.m == other.m
            and abs(self.lo - other.lo) < 1e-9
            and abs(self.hi - other.hi) < 1e-9
        )

    def write_csv(self, fh: io.TextIOBase, manifest_hash: str | None = None) -> None:
        if manifest_hash:
            fh.write(f"# manifest: {manifest_hash}\n")
        fh.write("y,log_density\n")
        for y, lv in zip(self.ys, self.logvals):
            fh.write(f"{float(y)!r},{float(lv)!r}\n")


def _check_grids(ds: Sequence[GridDensity]) -> None:
    if not ds:
        raise ValueError("need at least one component density")
    for d in ds[1:]:
        if not ds[0].same_grid(d):
            raise ValueError("component densities must share the grid")


def mixture_grid(ds: Sequence[GridDensity], w) -> GridDensity:
    """Linear mixture sum_k w_k pi_k, trapezoid-normalized."""
    _check_grids(ds)
    wv = as_weight_array(w, len(ds))
    stack = np.stack([d.logvals for d in ds])
    with np.errstate(divide="ignore"):
        logw = np.log(wv)[:, None]
    shift = stack.max(axis=0)
    vals = np.exp(stack + logw - shift).sum(axis=0)
    with np.errstate(divide="ignore"):
        out = np.log(vals) + shift
    return GridDensity(ds[0].lo, ds[0].hi, out).normalize()


def locking_grid(ds: Sequence[GridDensity], w) -> GridDensity:
    """Geometric pool prod_k pi_k^{w_k}, trapezoid-normalized."""
    _check_grids(ds)
    wv = as_weight_array(w, len(ds))
    out = np.stack([d.logvals for d in ds]).T @ wv
    return GridDensity(ds[0].lo, ds[0].hi, out).normalize()


def superposition_grid(ds: Sequence[GridDensity], w, alphas) -> GridDensity:
    """Phase superposition |sum_k sqrt(w_k pi_k) e^{i alpha_k}|^2.

    Expanded as sum_k w_k pi_k + 2 sum_{k<j} sqrt(w_k w_j pi_k pi_j)
    cos(alpha_k - alpha_j); the cross terms use (log pi_k + log pi_j)/2
    before exponentiation so far tails cannot underflow pairwise products.
    """
    _check_grids(ds)
    wv = as_weight_array(w, len(ds))
    al = np.asarray(alphas, dtype=float).ravel()
    if al.size != len(ds):
        raise ValueError("need one phase per component")
    stack = np.stack([d.logvals for d in ds])
    shift = stack.max(axis=0)
    rel = np.exp(stack - shift)
    total = wv @ rel
    for k in range(len(ds)):
        for j in range(k + 1, len(ds)):
            cross = np.exp(0.5 * (stack[k] + stack[j]) - shift)
            total = total + 2.0 * np.sqrt(wv[k] * wv[j]) * np.cos(al[k] - al[j]) * cross
    # Exact cancellation can leave tiny negative rounding residue.
    total = np.clip(total, 0.0, None)
    with np.errstate(divide="ignore"):
        out = np.log(total) + shift
    return GridDensity(ds[0].lo, ds[0].hi, out).normalize()


def grid_bounds(values, pad_sds: float = 5.0) -> tuple[float, float]:
    """Default grid span: data range padded by pooled standard deviations."""
    v = np.asarray(values, dtype=float).ravel()
    sd = float(v.std()) if v.size > 1 else 1.0
    sd = max(sd, 1e-6)
    return float(v.min() - pad_sds * sd), float(v.max() + pad_sds * sd)


def predictive_grid(model, lo: float, hi: float, m: int = 4001,
                    chunk: int = 512) -> GridDensity:
    """Monte Carlo predictive density of one model on a uniform grid.

    log pi(y) = log mean_s f(y | theta_s), evaluated in chunks to bound
    the (grid x draws) broadcast.
    """
    ys = np.linspace(lo, hi, m)
    out = np.empty(m)
    logs = np.log(model.n_draws)
    for start in range(0, m, chunk):
        block = ys[start:start + chunk, None]
        ll = model.evaluator.log_density(block, model.params)
        shift = ll.max(axis=1, keepdims=True)
        out[start:start + chunk] = (
            np.log(np.exp(ll - shift).sum(axis=1)) + shift[:, 0] - logs
        )
    return GridDensity(lo, hi, out)
