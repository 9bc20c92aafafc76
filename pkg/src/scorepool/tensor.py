"""Per-draw evaluation cache for predictive score estimation.

For every (model k, data point i, posterior draw s) the tensor stores the
log sampling density and its first two derivatives with respect to the
outcome:

    loglik[s]   = log f_k(y_i | theta^(s))
    dloglik[s]  = d/dy   log f_k(y_i | theta^(s))
    d2loglik[s] = d^2/dy^2 log f_k(y_i | theta^(s))

Raw density derivatives are recovered downstream via f' = f * dlog and
f'' = f * (d2log + dlog^2), so everything stays in log scale and never
underflows.  Building the tensor costs O(n*K*S) likelihood evaluations and
is the only pass over the draws the whole pipeline needs.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "PointEvaluations",
    "ModelEvaluations",
    "EvalTensor",
    "build_eval_tensor",
    "read_eval_csv",
    "write_eval_csv",
]


@dataclass(frozen=True)
class PointEvaluations:
    """Evaluations of one model's log likelihood at one data point.

    ``logweights`` holds optional extra per-draw log weights (all zeros
    means plain in-sample weighting); leave-one-out reweighting attaches
    ``-loglik`` here, possibly Pareto-smoothed, with the fitted tail shape
    recorded in ``pareto_k``.
    """

    model_id: str
    point_id: int
    loglik: np.ndarray
    dloglik: np.ndarray
    d2loglik: np.ndarray
    logweights: np.ndarray | None = None
    pareto_k: float | None = None

    def __post_init__(self):
        for name in ("loglik", "dloglik", "d2loglik"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
        s = self.loglik.size
        if s < 1:
            raise ValueError("need at least one draw")
        if self.dloglik.size != s or self.d2loglik.size != s:
            raise ValueError("loglik, dloglik, d2loglik must share length")
        for name in ("loglik", "dloglik", "d2loglik"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(
                    f"non-finite {name} for model {self.model_id!r}, "
                    f"point {self.point_id}"
                )
        if self.logweights is not None:
            lw = np.asarray(self.logweights, dtype=float)
            if lw.size != s or not np.all(np.isfinite(lw)):
                raise ValueError("logweights must be finite, length S")
            object.__setattr__(self, "logweights", lw)

    @property
    def n_draws(self) -> int:
        return self.loglik.size


@dataclass(frozen=True)
class ModelEvaluations:
    """All points of one model, stored as (n, S) arrays."""

    model_id: str
    loglik: np.ndarray
    dloglik: np.ndarray
    d2loglik: np.ndarray

    def point(self, i: int) -> PointEvaluations:
        return PointEvaluations(
            self.model_id, i, self.loglik[i], self.dloglik[i], self.d2loglik[i]
        )

    @property
    def n_points(self) -> int:
        return self.loglik.shape[0]

    @property
    def n_draws(self) -> int:
        return self.loglik.shape[1]


@dataclass(frozen=True)
class EvalTensor:
    """Rectangular cache of per-draw evaluations over models x points."""

    blocks: tuple[ModelEvaluations, ...]
    n_points: int = field(init=False)

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("tensor needs at least one model")
        n = self.blocks[0].n_points
        for b in self.blocks:
            if b.n_points != n:
                raise ValueError("all models must cover the same points")
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "n_points", n)

    @property
    def n_models(self) -> int:
        return len(self.blocks)

    @property
    def model_ids(self) -> list[str]:
        return [b.model_id for b in self.blocks]

    def point(self, k: int, i: int) -> PointEvaluations:
        return self.blocks[k].point(i)


def build_eval_tensor(models: Sequence, data: np.ndarray) -> EvalTensor:
    """Evaluate every model's draws at every data point.

    ``models`` are :class:`~scorepool.models.Draws`; each carries an
    evaluator with vectorized ``log_density``, ``grad_y`` and ``lap_y``
    methods.  Cells are independent, so the fill order is irrelevant.
    """
    data = np.asarray(data, dtype=float).ravel()
    if data.size == 0:
        raise ValueError("data must be non-empty")
    blocks = []
    for k, model in enumerate(models):
        ev, params = model.evaluator, model.params
        ll = np.empty((data.size, model.n_draws))
        dl = np.empty_like(ll)
        d2l = np.empty_like(ll)
        for i, y in enumerate(data):
            ll[i] = ev.log_density(y, params, point=i)
            dl[i] = ev.grad_y(y, params, point=i)
            d2l[i] = ev.lap_y(y, params, point=i)
        for name, arr in (("log_lik", ll), ("dlog_lik", dl), ("d2log_lik", d2l)):
            bad = ~np.isfinite(arr)
            if bad.any():
                i, s = np.argwhere(bad)[0]
                raise ValueError(
                    f"non-finite {name} from model {model.model_id!r} "
                    f"(k={k}) at point {i}, draw {s}"
                )
        blocks.append(ModelEvaluations(model.model_id, ll, dl, d2l))
    return EvalTensor(tuple(blocks))


# ---------------------------------------------------------------------------
# Long-format CSV interchange
# ---------------------------------------------------------------------------

CSV_HEADER = ["model_id", "draw_id", "point_id", "log_lik", "dlog_lik", "d2log_lik"]


def write_eval_csv(tensor: EvalTensor, fh: io.TextIOBase, manifest_hash: str | None = None) -> None:
    """Emit the tensor in long format, one row per (model, draw, point)."""
    if manifest_hash:
        fh.write(f"# manifest: {manifest_hash}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for block in tensor.blocks:
        for s in range(block.n_draws):
            for i in range(block.n_points):
                writer.writerow(
                    [
                        block.model_id,
                        s,
                        i,
                        repr(float(block.loglik[i, s])),
                        repr(float(block.dloglik[i, s])),
                        repr(float(block.d2loglik[i, s])),
                    ]
                )


def read_eval_csv(fh: Iterable[str]) -> EvalTensor:
    """Ingest a long-format evaluation table.

    Models may have different draw counts; every (model, draw) pair must
    cover the identical set of point ids.
    """
    rows = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(rows)
    missing = set(CSV_HEADER) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"evaluation CSV missing columns: {sorted(missing)}")
    cells: dict[str, dict[tuple[int, int], tuple[float, float, float]]] = {}
    model_order: list[str] = []
    for row in reader:
        mid = row["model_id"]
        if mid not in cells:
            cells[mid] = {}
            model_order.append(mid)
        key = (int(row["point_id"]), int(row["draw_id"]))
        cells[mid][key] = (
            float(row["log_lik"]),
            float(row["dlog_lik"]),
            float(row["d2log_lik"]),
        )

    point_ids = sorted({i for c in cells.values() for (i, _) in c})
    n = len(point_ids)
    point_pos = {p: j for j, p in enumerate(point_ids)}
    blocks = []
    for mid in model_order:
        draw_ids = sorted({s for (_, s) in cells[mid]})
        draw_pos = {d: j for j, d in enumerate(draw_ids)}
        ns = len(draw_ids)
        if len(cells[mid]) != n * ns:
            raise ValueError(f"model {mid!r}: incomplete (point, draw) grid")
        ll = np.empty((n, ns))
        dl = np.empty_like(ll)
        d2l = np.empty_like(ll)
        for (i, s), (a, b, c) in cells[mid].items():
            ii, ss = point_pos[i], draw_pos[s]
            ll[ii, ss], dl[ii, ss], d2l[ii, ss] = a, b, c
        blocks.append(ModelEvaluations(mid, ll, dl, d2l))
    return EvalTensor(tuple(blocks))
