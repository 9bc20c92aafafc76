"""Experiment harness: one function per study, CLI-independent.

Each replication is a pure function of (config, replication index), with
all randomness drawn from counter-based streams spawned off the root
seed, so replications can run serially or in a process pool and produce
identical results either way.  Output rows are plain dicts ready for CSV.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .baselines import METHODS, MethodReport, bma_weights, evaluate_on_test, hyva_select
from .baselines import stacking_weights
from .estimators import score_table
from .models import (
    SCENARIOS,
    ScenarioConfig,
    log_marginal_m1,
    log_marginal_m2,
    m1_posterior,
    m2_posterior,
    regression_gibbs,
    simulate_scenario,
)
from .optimize import fit_locking, fit_quacking
from .pooling import (
    ObjectiveCoefficients,
    QuackCoefficients,
    SimplexWeights,
    grid_bounds,
    predictive_grid,
)
from .tensor import build_eval_tensor

__all__ = [
    "NonNestedSettings",
    "nonnested_replication",
    "run_nonnested",
    "overfit_cell",
    "run_overfit",
    "results_rows_to_csv",
    "OVERFIT_COLUMNS",
]

# Hyperparameters of the two benchmark models (Shao-style non-nested pair).
M1_V0 = 10.0
M2_NU0 = 0.1
M2_TAU0 = 1.0


def derive_seed(root: int, *key: int) -> int:
    """Deterministic child seed for a (root, key...) combination."""
    ss = np.random.SeedSequence(root, spawn_key=tuple(key))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class NonNestedSettings:
    """Knobs of the non-nested comparison beyond the scenario itself."""

    n_draws: int = 4000
    loo: bool = True
    alpha: float = 1.01
    quack_restarts: int = 10
    grid_m: int = 4001


def nonnested_replication(
    cfg: ScenarioConfig,
    scenario_id: int,
    rep: int,
    settings: NonNestedSettings = NonNestedSettings(),
) -> list[dict]:
    """Run all seven methods on one simulated train/test split.

    Every method consumes the same posterior draws through one shared
    evaluation tensor, so cross-method comparisons are paired.
    """
    train, test = simulate_scenario(cfg, rep)
    m1 = m1_posterior(train, v0=M1_V0, n_draws=settings.n_draws,
                      seed=derive_seed(cfg.seed, rep, 1))
    m2 = m2_posterior(train, nu0=M2_NU0, tau0=M2_TAU0, n_draws=settings.n_draws,
                      seed=derive_seed(cfg.seed, rep, 2))
    models = [m1, m2]

    tensor = build_eval_tensor(models, train)
    table_sel = score_table(tensor, loo=settings.loo)
    table_in = table_sel if not settings.loo else score_table(tensor, loo=False)

    log_marginals = [
        log_marginal_m1(train, M1_V0),
        log_marginal_m2(train, M2_NU0, M2_TAU0),
    ]
    ml_idx = int(np.argmax(log_marginals))
    bma = bma_weights(log_marginals)
    loo_table = table_sel if settings.loo else score_table(tensor, loo=True)
    loo_idx = int(np.argmax(loo_table.lpd.sum(axis=0)))
    stack_w = stacking_weights(loo_table.lpd)
    hyva_idx = hyva_select(table_sel)

    coeffs = ObjectiveCoefficients(
        table_sel.grad, table_sel.lap, tuple(tensor.model_ids), loo=settings.loo
    )
    lock_fit = fit_locking(coeffs, alpha=settings.alpha)
    quack_coeffs = QuackCoefficients(
        table_in.lpd, table_in.grad, table_in.lap, tuple(tensor.model_ids)
    )
    quack_fit = fit_quacking(
        quack_coeffs,
        alpha=settings.alpha,
        restarts=settings.quack_restarts,
        seed=derive_seed(cfg.seed, rep, 3),
    )

    # Shared test-side evaluations.
    test_tensor = build_eval_tensor(models, test)
    test_table = score_table(test_tensor, loo=False)
    lo, hi = grid_bounds(np.concatenate([train, test]))
    grids = [predictive_grid(m, lo, hi, settings.grid_m) for m in models]

    fitted: dict[str, object] = {
        "ml_select": SimplexWeights.vertex(2, ml_idx),
        "bma": bma,
        "loo_select": SimplexWeights.vertex(2, loo_idx),
        "stacking": stack_w,
        "hyva_select": SimplexWeights.vertex(2, hyva_idx),
        "locking": lock_fit.weights,
        "quacking": quack_fit.weights,
    }
    rows = []
    for method in METHODS:
        report: MethodReport = evaluate_on_test(
            fitted[method], method, test, models,
            test_tensor=test_tensor, test_table=test_table, component_grids=grids,
        )
        wvec = report.weight_vector()
        rows.append(
            {
                "scenario": scenario_id,
                "replication": rep,
                "method": method,
                **{f"w{j + 1}": wvec[j] for j in range(len(wvec))},
                "test_log_score": report.test_log_score,
                "test_hyva_score": report.test_hyva_score,
            }
        )
    return rows


def _nonnested_worker(args) -> list[dict]:
    cfg, scenario_id, rep, settings = args
    return nonnested_replication(cfg, scenario_id, rep, settings)


def run_nonnested(
    cfg: ScenarioConfig,
    scenario_id: int,
    settings: NonNestedSettings = NonNestedSettings(),
    threads: int = 1,
) -> tuple[list[dict], list[tuple[int, str]]]:
    """All replications of one scenario; returns (rows, failures).

    Rows come back sorted by (replication, method order) regardless of
    scheduling.  Failures are collected, not raised, so partial results
    survive.
    """
    jobs = [(cfg, scenario_id, rep, settings) for rep in range(cfg.replications)]
    results: dict[int, list[dict]] = {}
    failures: list[tuple[int, str]] = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = {rep: pool.submit(_nonnested_worker, job)
                       for rep, job in enumerate(jobs)}
            for rep, fut in futures.items():
                try:
                    results[rep] = fut.result()
                except Exception as exc:  # noqa: BLE001 - preserve partial results
                    failures.append((rep, f"{type(exc).__name__}: {exc}"))
    else:
        for rep, job in enumerate(jobs):
            try:
                results[rep] = _nonnested_worker(job)
            except Exception as exc:  # noqa: BLE001 - preserve partial results
                failures.append((rep, f"{type(exc).__name__}: {exc}"))
    rows = [row for rep in sorted(results) for row in results[rep]]
    return rows, failures


RESULT_COLUMNS_BASE = ["scenario", "replication", "method"]


def results_rows_to_csv(rows: Sequence[dict], fh, manifest_hash: str | None = None) -> None:
    """Write replication rows with a stable column order."""
    n_w = max((sum(1 for c in r if c.startswith("w")) for r in rows), default=0)
    cols = RESULT_COLUMNS_BASE + [f"w{j + 1}" for j in range(n_w)] + [
        "test_log_score",
        "test_hyva_score",
    ]
    if manifest_hash:
        fh.write(f"# manifest: {manifest_hash}\n")
    fh.write(",".join(cols) + "\n")
    for r in rows:
        fh.write(",".join(_cell(r.get(c)) for c in cols) + "\n")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


# ---------------------------------------------------------------------------
# Overfitting study (regression, growing dimension)
# ---------------------------------------------------------------------------

OVERFIT_COLUMNS = ["p", "iter", "insample_lpd", "loo_lpd", "insample_hyva", "loo_hyva"]

# Low signal-to-noise truth: three active coefficients, unit noise.
ACTIVE_COEF = 0.3
N_ACTIVE = 3


def overfit_cell(
    p: int,
    iteration: int,
    n: int,
    root_seed: int,
    n_draws: int = 1000,
    warmup: int = 200,
) -> dict:
    """One (dimension, iteration) cell of the overfitting study."""
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(root_seed, spawn_key=(p, iteration)))
    )
    x = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[: min(N_ACTIVE, p)] = ACTIVE_COEF
    y = x @ beta + rng.standard_normal(n)
    model = regression_gibbs(
        x, y, n_draws=n_draws, warmup=warmup,
        seed=derive_seed(root_seed, p, iteration, 1),
    )
    tensor = build_eval_tensor([model], y)
    t_in = score_table(tensor, loo=False)
    t_loo = score_table(tensor, loo=True)
    return {
        "p": p,
        "iter": iteration,
        "insample_lpd": float(t_in.lpd.sum()),
        "loo_lpd": float(t_loo.lpd.sum()),
        "insample_hyva": float(t_in.hyva.sum()),
        "loo_hyva": float(t_loo.hyva.sum()),
    }


def _overfit_worker(args) -> dict:
    return overfit_cell(*args)


def run_overfit(
    p_list: Sequence[int],
    iterations: int,
    n: int,
    root_seed: int,
    n_draws: int = 1000,
    warmup: int = 200,
    threads: int = 1,
) -> tuple[list[dict], list[tuple[tuple[int, int], str]]]:
    """Full grid of (p, iteration) cells; returns (rows, failures)."""
    if max(p_list) > n:
        raise ValueError("regression dimension cannot exceed the sample size")
    jobs = [(p, it, n, root_seed, n_draws, warmup)
            for p in p_list for it in range(iterations)]
    rows: list[dict] = []
    failures: list[tuple[tuple[int, int], str]] = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [(job, pool.submit(_overfit_worker, job)) for job in jobs]
            for job, fut in futures:
                try:
                    rows.append(fut.result())
                except Exception as exc:  # noqa: BLE001
                    failures.append(((job[0], job[1]), f"{type(exc).__name__}: {exc}"))
    else:
        for job in jobs:
            try:
                rows.append(_overfit_worker(job))
            except Exception as exc:  # noqa: BLE001
                failures.append(((job[0], job[1]), f"{type(exc).__name__}: {exc}"))
    rows.sort(key=lambda r: (r["p"], r["iter"]))
    return rows, failures


def scenario_config(
    scenario_id: int | None,
    mu_star: float | None,
    v_star: float | None,
    n_train: int,
    n_test: int,
    replications: int,
    seed: int,
) -> ScenarioConfig:
    """Resolve a ScenarioConfig from either a scenario id or explicit DGP."""
    if scenario_id is not None:
        if scenario_id not in SCENARIOS:
            raise ValueError(f"unknown scenario {scenario_id}; valid: {sorted(SCENARIOS)}")
        mu, v = SCENARIOS[scenario_id]
    else:
        if mu_star is None or v_star is None:
            raise ValueError("need either a scenario id or mu_star and v_star")
        mu, v = mu_star, v_star
    return ScenarioConfig(mu, v, n_train=n_train, n_test=n_test,
                          replications=replications, seed=seed)
