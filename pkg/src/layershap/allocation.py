"""Turn per-layer contributions into per-layer pruning ratios.

Layers that contribute more are pruned less. Contributions are min-max scaled
onto ``[0, 2*lam]`` and subtracted from the global ratio, then re-centered so the
mean ratio stays at ``rho``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, InvalidParameterError

DEFAULT_LAMBDA = 0.1


@dataclass(frozen=True)
class SparsityPlan:
    rho: float
    lam: float
    ratios: tuple[float, ...]
    clamped: bool = False
    source: str = ""

    @property
    def T(self) -> int:
        return len(self.ratios)

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "lambda": self.lam,
            "ratios": list(self.ratios),
            "clamped": self.clamped,
            "source": self.source,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> SparsityPlan:
        try:
            d = json.loads(text)
            return cls(float(d["rho"]), float(d["lambda"]),
                       tuple(float(r) for r in d["ratios"]),
                       bool(d["clamped"]), str(d["source"]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed sparsity plan: {exc}") from exc

    @classmethod
    def uniform(cls, rho: float, T: int, source: str = "uniform") -> SparsityPlan:
        return cls(rho, 0.0, (float(rho),) * T, False, source)


def normalize_contributions(contributions: Sequence[float], lam: float) -> np.ndarray:
    """Scale contributions onto ``[0, 2*lam]`` (minimum -> 0, maximum -> 2*lam).

    If every contribution is equal the range is empty and each layer gets
    ``lam``, the midpoint, which leaves the global ratio unchanged.
    """
    phi = np.asarray(contributions, dtype=np.float64)
    if phi.ndim != 1 or phi.size == 0:
        raise InvalidParameterError("contributions must be a non-empty 1-D sequence")
    if np.isnan(phi).any():
        raise InvalidInputError("contributions contain NaN")
    if not lam >= 0:
        raise InvalidParameterError(f"lambda must be non-negative, got {lam}")
    lo, hi = phi.min(), phi.max()
    if hi == lo:
        return np.full(phi.size, float(lam))
    return 2 * lam * (phi - lo) / (hi - lo)


def unclamped_ratios(contributions: Sequence[float], rho: float, lam: float) -> np.ndarray:
    a = normalize_contributions(contributions, lam)
    return rho - a + a.mean()


def allocate_ratios(
    contributions: Sequence[float],
    rho: float,
    lam: float = DEFAULT_LAMBDA,
    source: str = "",
) -> SparsityPlan:
    """Per-layer pruning ratios with mean ``rho``, clamped into ``[0, 1]``.

    ``plan.clamped`` records whether clamping moved any ratio; when it did the
    mean is no longer exactly ``rho`` and a warning is issued.
    """
    if not 0 <= rho <= 1 or math.isnan(rho):
        raise InvalidParameterError(f"rho must lie in [0, 1], got {rho}")
    raw = unclamped_ratios(contributions, rho, lam)
    ratios = np.clip(raw, 0.0, 1.0)
    clamped = bool((ratios != raw).any())
    if clamped:
        warnings.warn(
            f"pruning ratios clamped to [0, 1]; mean is now {ratios.mean():.6f} instead of {rho}",
            stacklevel=2,
        )
    return SparsityPlan(float(rho), float(lam), tuple(ratios.tolist()), clamped, source)
