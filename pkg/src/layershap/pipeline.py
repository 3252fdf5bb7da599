"""End-to-end comparison of uniform pruning against Shapley-guided allocation."""

from __future__ import annotations

from dataclasses import dataclass

from .allocation import DEFAULT_LAMBDA, SparsityPlan, allocate_ratios
from .coalition import ShapleyReport, exact_shapley, swsv
from .data import CalibrationBatch
from .evaluation import PerplexityOracle, perplexity
from .model import ModelCheckpoint
from .pruning import PruneMethod, apply_plan, prune_uniform


@dataclass(frozen=True)
class Comparison:
    dense_ppl: float
    uniform_ppl: float
    shapley_ppl: float
    report: ShapleyReport
    plan: SparsityPlan
    method: str

    def table(self) -> str:
        rows = [
            ("method", "allocation", "sparsity", "ppl"),
            ("dense", "-", "0.00", f"{self.dense_ppl:.4f}"),
            (self.method, "uniform", f"{self.plan.rho:.2f}", f"{self.uniform_ppl:.4f}"),
            (self.method, "shapley", f"{self.plan.rho:.2f}", f"{self.shapley_ppl:.4f}"),
        ]
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"


def layer_contributions(
    model: ModelCheckpoint,
    calibration: CalibrationBatch,
    window: int | None = 5,
    threads: int = 1,
) -> ShapleyReport:
    """Shapley contribution of each layer to ``1 / perplexity`` on ``calibration``.

    ``window=None`` enumerates all coalitions exactly.
    """
    oracle = PerplexityOracle(model, calibration)
    T = model.config.n_layers
    if window is None:
        return exact_shapley(oracle, T, threads=threads)
    return swsv(oracle, T, window, threads=threads)


def compare(
    model: ModelCheckpoint,
    calibration: CalibrationBatch,
    heldout: CalibrationBatch,
    rho: float = 0.5,
    lam: float = DEFAULT_LAMBDA,
    window: int | None = 5,
    method: PruneMethod | str = PruneMethod.MAGNITUDE,
    threads: int = 1,
) -> Comparison:
    method = PruneMethod(method)
    report = layer_contributions(model, calibration, window, threads)
    plan = allocate_ratios(report.contributions, rho, lam, source=report.digest())
    uniform = prune_uniform(model, rho, method, calibration)
    shaped, _ = apply_plan(model, plan, method, calibration, threads)
    return Comparison(
        dense_ppl=perplexity(model, heldout).ppl,
        uniform_ppl=perplexity(uniform, heldout).ppl,
        shapley_ppl=perplexity(shaped, heldout).ppl,
        report=report,
        plan=plan,
        method=method.value,
    )
