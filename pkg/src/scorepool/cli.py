"""Command-line front end for the pooling experiments.

Commands
--------
nonnested       four-scenario comparison of all seven combiners
overfit         regression study: in-sample vs LOO score gaps as p grows
demo-operators  grid demo of mixture / locking / superposition pools
sample-locked   importance sampling from a fitted locked predictive
score           fit locking weights from an external evaluation-table CSV

Every command resolves its configuration from defaults, an optional TOML
file (``--config``), and explicit flags (highest precedence), records the
resolved values in ``manifest.json``, and stamps the manifest hash into
every CSV/SVG it writes.  ``--dry-run`` validates and prints the manifest
without computing anything.  Diagnostics (e.g. high Pareto k-hat) warn on
stderr but exit 0; failed replications exit 1 with partial results kept.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .estimators import score_table
from .experiments import (
    NonNestedSettings,
    OVERFIT_COLUMNS,
    derive_seed,
    results_rows_to_csv,
    run_nonnested,
    run_overfit,
    scenario_config,
)
from .manifest import RunManifest
from .models import m1_posterior, m2_posterior, simulate_scenario, write_dataset_csv
from .optimize import fit_locking
from .pooling import (
    GridDensity,
    ObjectiveCoefficients,
    SimplexWeights,
    grid_bounds,
    locking_grid,
    mixture_grid,
    predictive_grid,
    superposition_grid,
)
from .sampling import mode_bound_check, sample_locked, weighted_kde_grid
from .svgfig import Series, box_chart, line_chart, panel_chart
from .tensor import build_eval_tensor, read_eval_csv, write_eval_csv

_LOG_2PI = float(np.log(2.0 * np.pi))


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < TOML config < explicit CLI flags."""
    cfg = dict(defaults)
    cfg.update(_load_config(getattr(args, "config", None)))
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _start(args, command: str, cfg: dict) -> tuple[RunManifest, Path | None]:
    manifest = RunManifest(command, cfg, int(cfg.get("seed", 0)), __version__)
    if args.dry_run:
        print(json.dumps(manifest.to_dict(), indent=2, sort_keys=True))
        return manifest, None
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest.mark_started()
    return manifest, outdir


def _finish(manifest: RunManifest, outdir: Path) -> None:
    manifest.mark_finished()
    manifest.write(outdir)


def _parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]


def _parse_ints(text: str) -> list[int]:
    return [int(tok) for tok in text.replace(",", " ").split()]


# ---------------------------------------------------------------------------
# nonnested
# ---------------------------------------------------------------------------

_NONNESTED_DEFAULTS = dict(
    scenario=None, mu_star=None, v_star=None, replications=100,
    n_train=200, n_test=50, draws=4000, seed=0, loo=True, dump_data=False,
)


def cmd_nonnested(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _NONNESTED_DEFAULTS)
    scenario = scenario_config(
        cfg["scenario"], cfg["mu_star"], cfg["v_star"],
        cfg["n_train"], cfg["n_test"], cfg["replications"], cfg["seed"],
    )
    scenario_id = cfg["scenario"] if cfg["scenario"] is not None else 0
    manifest, outdir = _start(args, "nonnested", cfg)
    if outdir is None:
        return 0
    settings = NonNestedSettings(n_draws=cfg["draws"], loo=bool(cfg["loo"]))
    rows, failures = run_nonnested(scenario, scenario_id, settings,
                                   threads=args.threads)
    with open(outdir / "results.csv", "w") as fh:
        results_rows_to_csv(rows, fh, manifest.hash)
    if cfg["dump_data"]:
        for rep in range(scenario.replications):
            train, test = simulate_scenario(scenario, rep)
            for part, values in (("train", train), ("test", test)):
                with open(outdir / f"{part}_rep{rep:03d}.csv", "w") as fh:
                    write_dataset_csv(values, fh, manifest.hash)

    methods = sorted({r["method"] for r in rows}, key=_method_order)
    with open(outdir / "weights_summary.csv", "w") as fh:
        fh.write(f"# manifest: {manifest.hash}\n")
        fh.write("method,w1_mean,w1_sd,w1_median,test_log_score_mean,test_log_score_sd\n")
        for m in methods:
            w1 = np.array([r["w1"] for r in rows if r["method"] == m])
            ls = np.array([r["test_log_score"] for r in rows if r["method"] == m])
            stats = [
                w1.mean(), w1.std(ddof=1) if w1.size > 1 else 0.0, np.median(w1),
                ls.mean(), ls.std(ddof=1) if ls.size > 1 else 0.0,
            ]
            fh.write(m + "," + ",".join(repr(float(s)) for s in stats) + "\n")

    simplex_methods = [m for m in methods if m != "quacking"]
    w1_groups = [
        (m, [r["w1"] for r in rows if r["method"] == m]) for m in simplex_methods
    ]
    (outdir / "weights_w1.svg").write_text(
        box_chart(w1_groups, title="fitted weight on model 1",
                  ylabel="w1", manifest_hash=manifest.hash)
    )
    score_groups = [
        (m, [r["test_log_score"] for r in rows if r["method"] == m]) for m in methods
    ]
    (outdir / "test_log_scores.svg").write_text(
        box_chart(score_groups, title="test log predictive score",
                  ylabel="sum log density", manifest_hash=manifest.hash)
    )
    manifest.note("replications_completed", len({r["replication"] for r in rows}))
    manifest.note("failures", [f"rep {rep}: {msg}" for rep, msg in failures])
    _finish(manifest, outdir)
    if failures:
        for rep, msg in failures:
            print(f"replication {rep} failed: {msg}", file=sys.stderr)
        return 1
    return 0


def _method_order(m: str) -> int:
    from .baselines import METHODS

    return METHODS.index(m) if m in METHODS else len(METHODS)


# ---------------------------------------------------------------------------
# overfit
# ---------------------------------------------------------------------------

_OVERFIT_DEFAULTS = dict(
    p_list="1,25,50,75,100", iterations=10, n=100, draws=1000,
    warmup=200, seed=0,
)


def cmd_overfit(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _OVERFIT_DEFAULTS)
    p_list = _parse_ints(cfg["p_list"]) if isinstance(cfg["p_list"], str) else list(cfg["p_list"])
    if max(p_list) > cfg["n"]:
        print(f"error: max p ({max(p_list)}) exceeds n ({cfg['n']})", file=sys.stderr)
        return 2
    manifest, outdir = _start(args, "overfit", cfg)
    if outdir is None:
        return 0
    rows, failures = run_overfit(
        p_list, cfg["iterations"], cfg["n"], cfg["seed"],
        n_draws=cfg["draws"], warmup=cfg["warmup"], threads=args.threads,
    )
    with open(outdir / "overfit.csv", "w") as fh:
        fh.write(f"# manifest: {manifest.hash}\n")
        fh.write(",".join(OVERFIT_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(repr(float(r[c])) if isinstance(r[c], float) else str(r[c])
                              for c in OVERFIT_COLUMNS) + "\n")

    ps = sorted({r["p"] for r in rows})
    mean = lambda col, p: float(np.mean([r[col] for r in rows if r["p"] == p]))
    panels = [
        (
            "log predictive score",
            "regression dimension p",
            "sum log density",
            [
                Series("in-sample", ps, [mean("insample_lpd", p) for p in ps]),
                Series("LOO", ps, [mean("loo_lpd", p) for p in ps], dashed=True),
            ],
        ),
        (
            "Hyvarinen score",
            "regression dimension p",
            "sum score",
            [
                Series("in-sample", ps, [mean("insample_hyva", p) for p in ps]),
                Series("LOO", ps, [mean("loo_hyva", p) for p in ps], dashed=True),
            ],
        ),
    ]
    (outdir / "overfit.svg").write_text(panel_chart(panels, manifest_hash=manifest.hash))
    manifest.note("failures", [f"p={p} iter={it}: {msg}" for (p, it), msg in failures])
    _finish(manifest, outdir)
    if failures:
        for (p, it), msg in failures:
            print(f"cell p={p} iter={it} failed: {msg}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# demo-operators
# ---------------------------------------------------------------------------

_DEMO_DEFAULTS = dict(
    components=["normal:-1.5,1.0", "normal:1.5,1.0"],
    weights="0.5,0.5", alphas="0,3.14159265", grid_m=4001, seed=0,
)


def _component_grid(spec: str, lo: float, hi: float, m: int) -> GridDensity:
    kind, _, params = spec.partition(":")
    vals = _parse_floats(params)
    ys = np.linspace(lo, hi, m)
    if kind == "normal":
        mu, sd = vals
        logvals = -0.5 * _LOG_2PI - np.log(sd) - 0.5 * ((ys - mu) / sd) ** 2
    elif kind == "student":
        from scipy.stats import t as student_t

        df, loc, scale = vals
        logvals = student_t.logpdf(ys, df, loc=loc, scale=scale)
    else:
        raise ValueError(f"unknown component kind {kind!r} (use normal: or student:)")
    return GridDensity(lo, hi, logvals).normalize()


def _component_span(spec: str) -> tuple[float, float]:
    kind, _, params = spec.partition(":")
    vals = _parse_floats(params)
    if kind == "normal":
        mu, sd = vals
    elif kind == "student":
        _, mu, sd = vals
        sd *= 2.0  # heavier tails need more room
    else:
        raise ValueError(f"unknown component kind {kind!r}")
    return mu - 6.0 * sd, mu + 6.0 * sd


def cmd_demo_operators(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _DEMO_DEFAULTS)
    specs = cfg["components"]
    if isinstance(specs, str):
        specs = specs.split()
    w = _parse_floats(cfg["weights"]) if isinstance(cfg["weights"], str) else cfg["weights"]
    alphas = _parse_floats(cfg["alphas"]) if isinstance(cfg["alphas"], str) else cfg["alphas"]
    if not (len(specs) == len(w) == len(alphas)):
        print("error: components, weights and alphas must have equal length",
              file=sys.stderr)
        return 2
    manifest, outdir = _start(args, "demo-operators", cfg)
    if outdir is None:
        return 0
    spans = [_component_span(s) for s in specs]
    lo, hi = min(s[0] for s in spans), max(s[1] for s in spans)
    comps = [_component_grid(s, lo, hi, cfg["grid_m"]) for s in specs]
    weights = SimplexWeights.normalized(w)
    combined = {
        "mixture": mixture_grid(comps, weights),
        "locking": locking_grid(comps, weights),
        "superposition": superposition_grid(comps, weights, alphas),
    }
    for i, comp in enumerate(comps):
        with open(outdir / f"component_{i}.csv", "w") as fh:
            comp.write_csv(fh, manifest.hash)
    for name, grid in combined.items():
        with open(outdir / f"{name}.csv", "w") as fh:
            grid.write_csv(fh, manifest.hash)

    series = [
        Series(f"component {i}", comps[i].ys, np.exp(comps[i].logvals), color="#bbbbbb")
        for i in range(len(comps))
    ] + [
        Series(name, grid.ys, np.exp(grid.logvals))
        for name, grid in combined.items()
    ]
    (outdir / "operators.svg").write_text(
        line_chart(series, title="combination operators", xlabel="y",
                   ylabel="density", manifest_hash=manifest.hash)
    )
    report = mode_bound_check(comps, weights)
    manifest.note("mode_bound", report.__dict__)
    _finish(manifest, outdir)
    if report.skipped:
        print(f"mode bound check skipped: {report.reason}")
    else:
        status = "ok" if report.passed else "VIOLATED"
        print(f"mode bound check {status}: locked mode {report.locked_mode:.4f} "
              f"in [{report.lower:.4f}, {report.upper:.4f}]")
        if not report.passed:
            return 1
    return 0


# ---------------------------------------------------------------------------
# sample-locked
# ---------------------------------------------------------------------------

_SAMPLE_DEFAULTS = dict(
    mu_star=4.0, v_star=3.0, n_train=200, draws=4000, n_samples=20000,
    weights=None, seed=0, loo=True, grid_m=2001,
)


def cmd_sample_locked(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _SAMPLE_DEFAULTS)
    manifest, outdir = _start(args, "sample-locked", cfg)
    if outdir is None:
        return 0
    scenario = scenario_config(None, cfg["mu_star"], cfg["v_star"],
                               cfg["n_train"], 1, 1, cfg["seed"])
    train, _ = simulate_scenario(scenario, 0)
    models = [
        m1_posterior(train, n_draws=cfg["draws"], seed=derive_seed(cfg["seed"], 0, 1)),
        m2_posterior(train, n_draws=cfg["draws"], seed=derive_seed(cfg["seed"], 0, 2)),
    ]
    if cfg["weights"]:
        weights = SimplexWeights.normalized(_parse_floats(cfg["weights"]))
        fit_json = None
    else:
        tensor = build_eval_tensor(models, train)
        table = score_table(tensor, loo=bool(cfg["loo"]))
        fit = fit_locking(ObjectiveCoefficients(table.grad, table.lap))
        weights = fit.weights
        fit_json = fit.to_json()
    sample = sample_locked(models, weights, cfg["n_samples"],
                           seed=derive_seed(cfg["seed"], 0, 3))
    with open(outdir / "data.csv", "w") as fh:
        write_dataset_csv(train, fh, manifest.hash)
    with open(outdir / "samples.csv", "w") as fh:
        sample.write_csv(fh, manifest.hash)
    (outdir / "diagnostics.json").write_text(sample.diagnostics_json() + "\n")
    if fit_json:
        (outdir / "fit.json").write_text(fit_json + "\n")

    lo, hi = grid_bounds(np.concatenate([train, sample.values]), pad_sds=2.0)
    grids = [predictive_grid(m, lo, hi, cfg["grid_m"]) for m in models]
    kde = weighted_kde_grid(sample, lo, hi, 512)
    ys = np.linspace(lo, hi, 512)
    dgp = np.exp(
        -0.5 * _LOG_2PI - 0.5 * np.log(cfg["v_star"])
        - 0.5 * (ys - cfg["mu_star"]) ** 2 / cfg["v_star"]
    )
    series = [
        Series("model 1 predictive", grids[0].ys, np.exp(grids[0].normalize().logvals),
               color="#bbbbbb"),
        Series("model 2 predictive", grids[1].ys, np.exp(grids[1].normalize().logvals),
               color="#999999", dashed=True),
        Series("locked (IS)", kde.ys, np.exp(kde.logvals), color="#1f77b4"),
        Series("true DGP", ys, dgp, color="#d62728", dashed=True),
    ]
    (outdir / "locked_sampling.svg").write_text(
        line_chart(series, title="locked predictive via importance sampling",
                   xlabel="y", ylabel="density", manifest_hash=manifest.hash)
    )
    manifest.note("diagnostics", json.loads(sample.diagnostics_json()))
    _finish(manifest, outdir)
    if sample.flagged:
        print(f"warning: Pareto k-hat {sample.pareto_k:.3f} > 0.7; importance "
              "weights are heavy-tailed and estimates may be unreliable",
              file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# score (external evaluation tables)
# ---------------------------------------------------------------------------

_SCORE_DEFAULTS = dict(table=None, alpha=1.01, seed=0, loo=True, emit_table=None)


def cmd_score(args: argparse.Namespace) -> int:
    cfg = _resolve(args, _SCORE_DEFAULTS)
    if not cfg["table"]:
        print("error: --table is required", file=sys.stderr)
        return 2
    manifest, outdir = _start(args, "score", cfg)
    if outdir is None:
        return 0
    with open(cfg["table"]) as fh:
        tensor = read_eval_csv(fh)
    table = score_table(tensor, loo=bool(cfg["loo"]))
    coeffs = ObjectiveCoefficients(table.grad, table.lap,
                                   tuple(tensor.model_ids), loo=bool(cfg["loo"]))
    fit = fit_locking(coeffs, alpha=cfg["alpha"])
    (outdir / "fit.json").write_text(fit.to_json() + "\n")
    if cfg["emit_table"]:
        with open(cfg["emit_table"], "w") as fh:
            write_eval_csv(tensor, fh, manifest.hash)
    high_k = int(np.sum(table.pareto_k > 0.7)) if bool(cfg["loo"]) else 0
    manifest.note("n_high_pareto_k", high_k)
    _finish(manifest, outdir)
    for mid, wk in zip(tensor.model_ids, fit.weights.w):
        print(f"{mid}: {wk:.6f}")
    if high_k:
        print(f"warning: {high_k} (model, point) cells with Pareto k-hat > 0.7",
              file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="root RNG seed")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--config", default=None, help="TOML config file")
    common.add_argument("--threads", type=int, default=1,
                        help="worker processes for replications")
    common.add_argument("--loo", dest="loo", action="store_true", default=None,
                        help="use leave-one-out score estimates (default)")
    common.add_argument("--insample", dest="loo", action="store_false",
                        help="use in-sample score estimates")
    common.add_argument("--dry-run", action="store_true",
                        help="validate config and print the manifest only")

    p = argparse.ArgumentParser(prog="scorepool",
                                description="score-matched pooling experiments")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    pn = sub.add_parser("nonnested", parents=[common],
                        help="four-scenario comparison of the seven methods")
    pn.add_argument("--scenario", type=int, choices=(1, 2, 3, 4))
    pn.add_argument("--mu-star", dest="mu_star", type=float)
    pn.add_argument("--v-star", dest="v_star", type=float)
    pn.add_argument("--replications", type=int)
    pn.add_argument("--n-train", dest="n_train", type=int)
    pn.add_argument("--n-test", dest="n_test", type=int)
    pn.add_argument("--draws", type=int, help="posterior draws per model")
    pn.add_argument("--dump-data", dest="dump_data", action="store_true",
                    default=None, help="also write per-replication datasets")
    pn.set_defaults(func=cmd_nonnested)

    po = sub.add_parser("overfit", parents=[common],
                        help="regression overfitting study")
    po.add_argument("--p-list", dest="p_list", help="comma-separated dimensions")
    po.add_argument("--iterations", type=int)
    po.add_argument("--n", type=int)
    po.add_argument("--draws", type=int)
    po.add_argument("--warmup", type=int)
    po.set_defaults(func=cmd_overfit)

    pd = sub.add_parser("demo-operators", parents=[common],
                        help="grid demo of the combination operators")
    pd.add_argument("--component", dest="components", action="append",
                    help="normal:MU,SD or student:DF,LOC,SCALE (repeatable)")
    pd.add_argument("--weights", help="comma-separated simplex weights")
    pd.add_argument("--alphas", help="comma-separated phases (radians)")
    pd.add_argument("--grid-m", dest="grid_m", type=int)
    pd.set_defaults(func=cmd_demo_operators)

    ps = sub.add_parser("sample-locked", parents=[common],
                        help="importance sampling from the locked predictive")
    ps.add_argument("--mu-star", dest="mu_star", type=float)
    ps.add_argument("--v-star", dest="v_star", type=float)
    ps.add_argument("--n-train", dest="n_train", type=int)
    ps.add_argument("--draws", type=int)
    ps.add_argument("--n-samples", dest="n_samples", type=int)
    ps.add_argument("--weights", help="fixed simplex weights (skip fitting)")
    ps.add_argument("--grid-m", dest="grid_m", type=int)
    ps.set_defaults(func=cmd_sample_locked)

    pc = sub.add_parser("score", parents=[common],
                        help="fit locking weights from an evaluation-table CSV")
    pc.add_argument("--table", help="long-format evaluation CSV")
    pc.add_argument("--alpha", type=float)
    pc.add_argument("--emit-table", dest="emit_table",
                    help="re-emit the ingested table to this path")
    pc.set_defaults(func=cmd_score)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
