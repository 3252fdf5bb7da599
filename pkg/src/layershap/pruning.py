"""One-shot unstructured pruning of the seven inner matrices of each layer.

Two criteria are supported. Magnitude pruning ranks every weight of a matrix
by ``|w|``. Wanda ranks weights by ``|w_ij| * ||x_j||``, where ``||x_j||`` is the
L2 norm of input feature ``j`` over a calibration batch, and compares weights
only within the same output row. Surviving weights are never modified.
"""

from __future__ import annotations

import enum
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .allocation import SparsityPlan
from .data import CalibrationBatch
from .errors import InvalidInputError, InvalidParameterError
from .model import INNER_NAMES, ModelCheckpoint, forward

# which collected activation feeds each inner matrix
_INPUT_OF = {"q_proj": "qkv", "k_proj": "qkv", "v_proj": "qkv", "o_proj": "o",
             "gate_proj": "ffn", "up_proj": "ffn", "down_proj": "down"}


class PruneMethod(str, enum.Enum):
    MAGNITUDE = "magnitude"
    WANDA = "wanda"


def _check_ratio(ratio: float):
    if not 0.0 <= ratio <= 1.0:
        raise InvalidParameterError(f"pruning ratio must lie in [0, 1], got {ratio}")


def _n_pruned(ratio: float, n: int) -> int:
    # tolerance guards against products like 0.29 * 100 == 28.999999999999996
    return min(n, math.floor(ratio * n + 1e-9))


def magnitude_prune_matrix(w: np.ndarray, ratio: float) -> np.ndarray:
    """Zero the ``floor(ratio * w.size)`` smallest-magnitude entries of ``w``.

    Ties go to the lower flat index first.
    """
    _check_ratio(ratio)
    w = np.asarray(w)
    if np.isnan(w).any():
        raise InvalidInputError("weight matrix contains NaN")
    k = _n_pruned(ratio, w.size)
    out = w.copy()
    if k:
        order = np.argsort(np.abs(w).ravel(), kind="stable")
        out.reshape(-1)[order[:k]] = 0
    return out


def wanda_prune_matrix(w: np.ndarray, input_norms: np.ndarray, ratio: float) -> np.ndarray:
    """Zero the lowest ``|w_ij| * input_norms[j]`` scores within each output row.

    Each row loses ``floor(ratio * n_cols)`` entries. When ``ratio * w.size`` is
    not a multiple of the row count, the leftover entries are taken one each
    from the leading rows, so the matrix as a whole loses exactly
    ``floor(ratio * w.size)`` entries.
    """
    _check_ratio(ratio)
    w = np.asarray(w)
    norms = np.asarray(input_norms, dtype=np.float64)
    if w.ndim != 2 or norms.shape != (w.shape[1],):
        raise InvalidInputError(
            f"input_norms of shape {norms.shape} does not match matrix of shape {w.shape}"
        )
    if (norms < 0).any() or np.isnan(norms).any() or np.isnan(w).any():
        raise InvalidInputError("weights and norms must be non-NaN and norms non-negative")
    rows, cols = w.shape
    total = _n_pruned(ratio, w.size)
    base, extra = divmod(total, rows)
    out = w.copy()
    if not total:
        return out
    scores = np.abs(w).astype(np.float64) * norms[None, :]
    order = np.argsort(scores, axis=1, kind="stable")
    for i in range(rows):
        k = base + (i < extra)
        out[i, order[i, :k]] = 0
    return out


@dataclass(frozen=True)
class MatrixSparsity:
    layer: int
    inner: str
    requested: float
    achieved: float
    numel: int


@dataclass(frozen=True)
class SparsityReport:
    entries: tuple[MatrixSparsity, ...]

    def layer_achieved(self) -> list[float]:
        """Fraction of zeros over all inner matrices of each layer."""
        layers = sorted({e.layer for e in self.entries})
        out = []
        for t in layers:
            es = [e for e in self.entries if e.layer == t]
            out.append(sum(e.achieved * e.numel for e in es) / sum(e.numel for e in es))
        return out

    def layer_requested(self) -> list[float]:
        seen = {}
        for e in self.entries:
            seen.setdefault(e.layer, e.requested)
        return [seen[t] for t in sorted(seen)]

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("layer,inner,requested,achieved\n")
        for e in self.entries:
            out.write(f"{e.layer},{e.inner},{e.requested!r},{e.achieved!r}\n")
        return out.getvalue()


def achieved_sparsity(model: ModelCheckpoint, requested: Sequence[float] | None = None) -> SparsityReport:
    """Exact fraction of zero entries in every inner matrix."""
    entries = []
    for t, layer in enumerate(model.layers, start=1):
        req = float("nan") if requested is None else float(requested[t - 1])
        for name, w in zip(INNER_NAMES, layer.matrices()):
            zeros = int(w.size - np.count_nonzero(w))
            entries.append(MatrixSparsity(t, name, req, zeros / w.size, int(w.size)))
    return SparsityReport(tuple(entries))


def collect_input_norms(model: ModelCheckpoint, batch: CalibrationBatch) -> list[dict[str, np.ndarray]]:
    """Per-layer L2 norm of each input feature of every inner matrix (dense model)."""
    sums = None
    for i in range(0, len(batch), 8):
        norms = forward(model, batch.sequences[i:i + 8], collect_input_norms=True).input_norms
        if sums is None:
            sums = norms
        else:
            sums = [{k: s[k] + n[k] for k in s} for s, n in zip(sums, norms)]
    return [{k: np.sqrt(v) for k, v in s.items()} for s in sums]


def _prune_all(model, ratios, method, batch, threads):
    method = PruneMethod(method)
    norms = None
    if method is PruneMethod.WANDA:
        if batch is None:
            raise InvalidInputError("Wanda pruning needs a calibration batch")
        norms = collect_input_norms(model, batch)

    def job(item):
        t, name = item
        w = getattr(model.layers[t], name)
        if method is PruneMethod.MAGNITUDE:
            return magnitude_prune_matrix(w, ratios[t])
        return wanda_prune_matrix(w, norms[t][_INPUT_OF[name]], ratios[t])

    items = [(t, name) for t in range(len(model.layers)) for name in INNER_NAMES]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, items))
    else:
        results = [job(i) for i in items]
    pruned = model.copy()
    for (t, name), w in zip(items, results):
        setattr(pruned.layers[t], name, w)
    return pruned


def apply_plan(
    model: ModelCheckpoint,
    plan: SparsityPlan,
    method: PruneMethod | str = PruneMethod.MAGNITUDE,
    batch: CalibrationBatch | None = None,
    threads: int = 1,
) -> tuple[ModelCheckpoint, SparsityReport]:
    """Prune every inner matrix of layer ``t`` at ``plan.ratios[t - 1]``.

    Embeddings, norms and the output head are left alone and ``model`` itself is
    not modified. Wanda statistics come from one dense pass over ``batch``.
    """
    if plan.T != model.config.n_layers:
        raise InvalidInputError(f"plan has {plan.T} ratios but the model has {model.config.n_layers} layers")
    for r in plan.ratios:
        _check_ratio(r)
    pruned = _prune_all(model, list(plan.ratios), method, batch, threads)
    return pruned, achieved_sparsity(pruned, plan.ratios)


def prune_uniform(
    model: ModelCheckpoint,
    rho: float,
    method: PruneMethod | str = PruneMethod.MAGNITUDE,
    batch: CalibrationBatch | None = None,
) -> ModelCheckpoint:
    """The same ratio ``rho`` in every layer."""
    _check_ratio(rho)
    return _prune_all(model, [rho] * model.config.n_layers, method, batch, 1)
