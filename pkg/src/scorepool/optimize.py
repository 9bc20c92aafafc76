"""Weight optimization for the pooled Hyvarinen objective.

Locking weights live on the simplex and the objective is convex there
(quadratic score term plus Dirichlet barrier), so exponentiated-gradient
mirror descent with backtracking finds the global minimum while keeping
every iterate strictly interior -- exactly what the barrier requires.
The hybrid quacking pool is non-convex; it gets multi-start Nelder-Mead
over softmax-reparametrized mixture weights and box-bounded exponents.
A brute-force simplex grid search doubles as a validation oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .pooling import (
    ObjectiveCoefficients,
    QuackCoefficients,
    QuackParams,
    SimplexWeights,
    hyva_objective,
    hyva_objective_grad,
    quack_coefficients,
    quack_objective,
)
from .tensor import EvalTensor

__all__ = [
    "FitResult",
    "mirror_descent",
    "fit_locking",
    "fit_quacking",
    "grid_oracle",
]


@dataclass(frozen=True)
class FitResult:
    """Outcome of one weight fit."""

    weights: SimplexWeights | QuackParams
    objective: float
    iterations: int
    converged: bool
    gradient_norm: float | None = None
    history: tuple[float, ...] = field(default=(), repr=False, compare=False)

    def to_json(self) -> str:
        if isinstance(self.weights, QuackParams):
            w = {
                "beta": self.weights.beta.w.tolist(),
                "w": self.weights.w.tolist(),
            }
        else:
            w = self.weights.w.tolist()
        return json.dumps(
            {
                "weights": w,
                "objective": self.objective,
                "iterations": self.iterations,
                "converged": self.converged,
            },
            sort_keys=True,
        )


def _kkt_residual(w: np.ndarray, grad: np.ndarray) -> float:
    """Projected gradient norm in the simplex geometry.

    ||w * (g - w.g)|| vanishes exactly at KKT points, whether the optimum
    is interior (gradient equalized) or on the boundary.
    """
    return float(np.linalg.norm(w * (grad - w @ grad)))


def mirror_descent(
    value_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    k: int,
    tol: float = 1e-8,
    max_iter: int = 10000,
    eta0: float = 0.1,
    start: np.ndarray | None = None,
) -> FitResult:
    """Minimize a convex function over the simplex by exponentiated gradient.

    Multiplicative updates w <- normalize(w * exp(-eta * g)) keep iterates
    strictly positive; eta is halved until the objective does not increase
    and grown mildly after accepted steps, so the recorded objective
    history is non-increasing by construction.
    """
    w = np.full(k, 1.0 / k) if start is None else np.asarray(start, dtype=float)
    obj, grad = value_and_grad(w)
    history = [obj]
    eta = eta0
    iterations = 0
    converged = _kkt_residual(w, grad) <= tol
    while not converged and iterations < max_iter:
        step = grad - grad.mean()
        accepted = False
        for _ in range(80):
            expo = -eta * step
            cand = w * np.exp(expo - expo.max())  # shift cancels after normalizing
            total = cand.sum()
            if total > 0.0 and np.isfinite(total):
                cand = cand / total
                cand_obj, cand_grad = value_and_grad(cand)
                if np.isfinite(cand_obj) and cand_obj <= obj:
                    accepted = True
                    break
            eta *= 0.5
        if not accepted:
            break
        assert cand_obj <= obj, "backtracking admitted an ascent step"
        w, obj, grad = cand, cand_obj, cand_grad
        history.append(obj)
        eta = min(eta * 1.5, 1e6)
        iterations += 1
        converged = _kkt_residual(w, grad) <= tol
    return FitResult(
        weights=SimplexWeights(w),
        objective=obj,
        iterations=iterations,
        converged=converged,
        gradient_norm=_kkt_residual(w, grad),
        history=tuple(history),
    )


def fit_locking(
    c: ObjectiveCoefficients,
    alpha: float = 1.01,
    tol: float = 1e-8,
    max_iter: int = 10000,
) -> FitResult:
    """Fit simplex locking weights by mirror descent from the uniform start.

    For alpha >= 1 the objective is convex on the simplex, so the returned
    point is the global minimum whenever ``converged`` is set.
    """

    def value_and_grad(w: np.ndarray) -> tuple[float, np.ndarray]:
        return hyva_objective(c, w, alpha), hyva_objective_grad(c, w, alpha)

    return mirror_descent(value_and_grad, c.n_models, tol=tol, max_iter=max_iter)


def grid_oracle(
    c: ObjectiveCoefficients, alpha: float = 1.01, resolution: float = 1e-3
) -> FitResult:
    """Exhaustive simplex grid argmin; validation oracle for K in {2, 3}."""
    k = c.n_models
    if k not in (2, 3):
        raise ValueError("grid oracle supports K = 2 or 3 only")
    ticks = np.linspace(0.0, 1.0, int(round(1.0 / resolution)) + 1)
    if k == 2:
        grid = np.column_stack([ticks, 1.0 - ticks])
    else:
        w1, w2 = [g.ravel() for g in np.meshgrid(ticks, ticks)]
        w3 = 1.0 - w1 - w2
        keep = w3 >= -1e-12
        grid = np.column_stack([w1[keep], w2[keep], np.clip(w3[keep], 0.0, None)])

    best_obj = np.inf
    best_w = grid[0]
    for block in np.array_split(grid, max(1, len(grid) // 8192)):
        q1 = c.a @ block.T  # (n, B)
        q2 = c.b @ block.T
        vals = np.sum(2.0 * q2 + q1**2, axis=0)
        if alpha != 1.0:
            with np.errstate(divide="ignore"):
                vals = vals - (alpha - 1.0) * np.where(
                    np.all(block > 0.0, axis=1), np.log(block).sum(axis=1), -np.inf
                )
        i = int(np.argmin(vals))
        if vals[i] < best_obj:
            best_obj = float(vals[i])
            best_w = block[i]
    return FitResult(
        weights=SimplexWeights.normalized(best_w),
        objective=best_obj,
        iterations=len(grid),
        converged=True,
        gradient_norm=None,
    )


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max())
    return z / z.sum()


def fit_quacking(
    tensor: EvalTensor | QuackCoefficients,
    alpha: float = 1.01,
    restarts: int = 10,
    seed: int = 0,
    box: float = 5.0,
) -> FitResult:
    """Fit the hybrid pool by multi-start Nelder-Mead.

    Mixture weights are softmax-reparametrized; the K+1 exponents are
    box-bounded (unbounded negative exponents can make the pool
    non-integrable).  The first start nests the locking solution exactly
    (w0 = 0, exponents and mixture weights at the fitted locking weights),
    so the optimizer can only improve on locking's objective; if no
    restart improves on that baseline it is returned with
    ``converged=False``.
    """
    c = tensor if isinstance(tensor, QuackCoefficients) else quack_coefficients(tensor)
    k = c.n_models
    lock = fit_locking(
        ObjectiveCoefficients(c.a, c.b, c.model_ids, loo=False), alpha=alpha
    )
    w_lock = np.clip(lock.weights.w, 1e-12, None)

    def unpack(x: np.ndarray) -> QuackParams:
        beta = _softmax(x[:k])
        return QuackParams(SimplexWeights.normalized(beta), x[k:])

    def objective(x: np.ndarray) -> float:
        return quack_objective(c, unpack(x), alpha)

    baseline_x = np.concatenate([np.log(w_lock), [0.0], w_lock])
    baseline_obj = objective(baseline_x)

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    starts = [baseline_x, np.concatenate([np.zeros(k), [0.0], w_lock])]
    while len(starts) < max(restarts, 1):
        logits = rng.normal(0.0, 1.0, size=k)
        w = np.clip(
            np.concatenate([[0.0], w_lock]) + rng.normal(0.0, 0.5, size=k + 1),
            -box,
            box,
        )
        starts.append(np.concatenate([logits, w]))
    starts = starts[: max(restarts, 1)]

    bounds = [(-30.0, 30.0)] * k + [(-box, box)] * (k + 1)
    best_x, best_obj, total_iters = baseline_x, baseline_obj, 0
    improved = False
    for x0 in starts:
        res = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            bounds=bounds,
            options={"maxiter": 4000, "xatol": 1e-8, "fatol": 1e-12},
        )
        total_iters += int(res.nit)
        if res.fun < best_obj - 1e-12:
            best_x, best_obj = res.x, float(res.fun)
            improved = True
    return FitResult(
        weights=unpack(best_x),
        objective=best_obj,
        iterations=total_iters,
        converged=improved,
        gradient_norm=None,
    )
