"""Perplexity, the perplexity-based coalition value, and activation similarity."""

from __future__ import annotations

import io
import json
import math
import threading
from dataclasses import dataclass

import numpy as np

from .coalition import LayerSet
from .data import CalibrationBatch
from .errors import InvalidInputError, NumericFailure
from .model import ModelCheckpoint, forward

CHUNK = 8
LOG2E = 1.0 / math.log(2.0)


@dataclass(frozen=True)
class PerplexityResult:
    ppl: float
    token_count: int
    mean_nll: float

    def to_json(self) -> str:
        return json.dumps({"ppl": self.ppl, "token_count": self.token_count,
                           "mean_nll": self.mean_nll}, indent=2) + "\n"


def _token_bits(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Negative log2-likelihood of each target, via a stabilized log-sum-exp."""
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    true = np.take_along_axis(z, targets[..., None], axis=-1)[..., 0]
    return np.log2(np.exp(z).sum(axis=-1)) - true * LOG2E


def perplexity(
    model: ModelCheckpoint,
    batch: CalibrationBatch,
    active: LayerSet | None = None,
    dtype=np.float64,
) -> PerplexityResult:
    """exp of the mean next-token negative log-likelihood over every position.

    Per-token losses are accumulated in bits with an exactly rounded sum, so the
    result does not depend on sequence order and ``2 ** mean`` is exact for a
    uniform predictor.
    """
    seqs = batch.sequences
    bits = []
    for i in range(0, len(seqs), CHUNK):
        chunk = seqs[i:i + CHUNK]
        logits = forward(model, chunk[:, :-1], active, dtype=dtype).logits
        b = _token_bits(logits.astype(np.float64), chunk[:, 1:])
        if not np.isfinite(b).all():
            bad = i + int(np.argwhere(~np.isfinite(b))[0, 0])
            raise NumericFailure(f"non-finite loss in sequence {bad}")
        bits.append(b.ravel())
    bits = np.concatenate(bits)
    mean_bits = math.fsum(bits.tolist()) / bits.size
    return PerplexityResult(2.0 ** mean_bits, int(bits.size), mean_bits / LOG2E)


def value_of(model: ModelCheckpoint, active: LayerSet, batch: CalibrationBatch, dtype=np.float64) -> float:
    """Coalition value ``1 / perplexity``; exactly 0 for the empty coalition."""
    if not active.bits:
        return 0.0
    return 1.0 / perplexity(model, batch, active, dtype).ppl


class PerplexityOracle:
    """Value oracle over layer coalitions of a fixed model and batch.

    ``calls`` counts forward evaluations; the empty coalition is free.
    """

    def __init__(self, model: ModelCheckpoint, batch: CalibrationBatch, dtype=np.float64):
        self.model = model
        self.batch = batch
        self.dtype = dtype
        self.calls = 0
        self._lock = threading.Lock()

    @property
    def n_layers(self) -> int:
        return self.model.config.n_layers

    def __call__(self, coalition: LayerSet) -> float:
        if coalition.bits:
            with self._lock:
                self.calls += 1
        return value_of(self.model, coalition, self.batch, self.dtype)


@dataclass(frozen=True)
class SimilarityProfile:
    similarities: tuple[float, ...]
    zero_vectors: int = 0

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("layer,similarity\n")
        for t, s in enumerate(self.similarities, start=1):
            out.write(f"{t},{s!r}\n")
        return out.getvalue()


def _hidden_states(model, batch):
    states = None
    for i in range(0, len(batch), CHUNK):
        h = forward(model, batch.sequences[i:i + CHUNK], capture_hidden=True).hidden
        states = [[x] for x in h] if states is None else [s + [x] for s, x in zip(states, h)]
    return [np.concatenate(s) for s in states]


def activation_cosine(dense: ModelCheckpoint, pruned: ModelCheckpoint, batch: CalibrationBatch) -> SimilarityProfile:
    """Per-layer cosine similarity of the residual stream after each layer.

    Cosines are taken per token position and averaged over every position in
    the batch. A position where either vector is all zeros contributes 0 and is
    counted in ``zero_vectors``.
    """
    if dense.config != pruned.config:
        raise InvalidInputError("models have different configurations")
    hd = _hidden_states(dense, batch)
    hp = _hidden_states(pruned, batch)
    sims = []
    zeros = 0
    for a, b in zip(hd[1:], hp[1:]):
        a = a.reshape(-1, a.shape[-1])
        b = b.reshape(-1, b.shape[-1])
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        ok = (na > 0) & (nb > 0)
        zeros += int((~ok).sum())
        cos = np.zeros(len(a))
        cos[ok] = np.einsum("ij,ij->i", a[ok], b[ok]) / (na[ok] * nb[ok])
        sims.append(float(np.clip(math.fsum(cos.tolist()) / len(cos), -1.0, 1.0)))
    return SimilarityProfile(tuple(sims), zeros)
