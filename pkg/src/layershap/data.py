"""Byte-level corpora and calibration batches."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, InvalidParameterError

HELDOUT_FRACTION = 0.1


def bundled_corpus() -> bytes:
    """About 1 MB of English technical prose shipped with the package."""
    return resources.files("layershap").joinpath("data/corpus.txt").read_bytes()


def load_corpus(path: str | Path | None = None) -> bytes:
    if path is None:
        return bundled_corpus()
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InvalidInputError(f"cannot read corpus {path}: {exc}") from exc


def split_corpus(corpus: bytes, heldout_fraction: float = HELDOUT_FRACTION) -> tuple[bytes, bytes]:
    """Split into (train, held-out); the held-out part is the tail of the stream."""
    cut = len(corpus) - int(len(corpus) * heldout_fraction)
    return corpus[:cut], corpus[cut:]


def corpus_id(corpus: bytes) -> str:
    return hashlib.sha256(corpus).hexdigest()[:16]


@dataclass(frozen=True)
class CalibrationBatch:
    sequences: np.ndarray
    source: str
    seed: int | None

    def __post_init__(self):
        if self.sequences.ndim != 2 or self.sequences.shape[0] == 0:
            raise InvalidInputError("a batch needs at least one sequence")

    def __len__(self) -> int:
        return self.sequences.shape[0]

    @property
    def length(self) -> int:
        return self.sequences.shape[1]


def make_calibration(corpus: bytes, count: int = 32, length: int = 256, seed: int = 0) -> CalibrationBatch:
    """``count`` random segments of ``length`` bytes, chosen reproducibly from ``seed``."""
    if count < 1 or length < 2:
        raise InvalidParameterError(f"need count >= 1 and length >= 2, got {count}, {length}")
    if len(corpus) < length:
        raise InvalidInputError(f"corpus of {len(corpus)} bytes is shorter than one segment ({length})")
    data = np.frombuffer(corpus, dtype=np.uint8)
    starts = np.random.default_rng(seed).integers(0, len(data) - length + 1, size=count)
    seqs = np.stack([data[s:s + length] for s in starts]).astype(np.int64)
    return CalibrationBatch(seqs, corpus_id(corpus), seed)


def contiguous_batch(corpus: bytes, length: int = 256, count: int | None = None) -> CalibrationBatch:
    """Non-overlapping consecutive windows from the start of ``corpus``."""
    if length < 2:
        raise InvalidParameterError(f"window length must be at least 2, got {length}")
    available = len(corpus) // length
    n = available if count is None else min(count, available)
    if n < 1:
        raise InvalidInputError(f"corpus of {len(corpus)} bytes holds no window of {length}")
    data = np.frombuffer(corpus[: n * length], dtype=np.uint8)
    return CalibrationBatch(data.reshape(n, length).astype(np.int64), corpus_id(corpus), None)
