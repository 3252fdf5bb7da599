"""Layer coalitions, memoized value oracles and Shapley attributions.

Layers are numbered ``1..T``. A coalition is stored as an integer bit pattern
where bit ``t - 1`` marks layer ``t`` as active, so the canonical cache key of a
coalition is simply that integer.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Protocol, Sequence

import numpy as np

from .errors import BudgetError, InvalidInputError, InvalidParameterError

EXACT_MAX_LAYERS = 20


@dataclass(frozen=True)
class LayerSet:
    """Immutable set of active layers drawn from ``{1, ..., population}``."""

    bits: int
    population: int

    def __post_init__(self):
        if self.population < 1:
            raise InvalidParameterError(f"population must be positive, got {self.population}")
        if self.bits < 0 or self.bits >> self.population:
            raise InvalidParameterError(
                f"bit pattern {self.bits:#x} has layers outside 1..{self.population}"
            )

    @classmethod
    def empty(cls, population: int) -> LayerSet:
        return cls(0, population)

    @classmethod
    def full(cls, population: int) -> LayerSet:
        return cls((1 << population) - 1, population)

    @classmethod
    def of(cls, layers: Iterable[int], population: int) -> LayerSet:
        bits = 0
        for t in layers:
            if not 1 <= t <= population:
                raise InvalidParameterError(f"layer {t} outside 1..{population}")
            bits |= 1 << (t - 1)
        return cls(bits, population)

    def _check(self, other: LayerSet):
        if self.population != other.population:
            raise InvalidParameterError(
                f"population mismatch: {self.population} vs {other.population}"
            )

    def __or__(self, other: LayerSet) -> LayerSet:
        self._check(other)
        return LayerSet(self.bits | other.bits, self.population)

    def __and__(self, other: LayerSet) -> LayerSet:
        self._check(other)
        return LayerSet(self.bits & other.bits, self.population)

    def __sub__(self, other: LayerSet) -> LayerSet:
        self._check(other)
        return LayerSet(self.bits & ~other.bits, self.population)

    def complement(self) -> LayerSet:
        return LayerSet(((1 << self.population) - 1) & ~self.bits, self.population)

    def add(self, t: int) -> LayerSet:
        return self | LayerSet.of([t], self.population)

    def __contains__(self, t: int) -> bool:
        return 1 <= t <= self.population and bool(self.bits >> (t - 1) & 1)

    def __iter__(self) -> Iterator[int]:
        return (t for t in range(1, self.population + 1) if self.bits >> (t - 1) & 1)

    def __len__(self) -> int:
        return bin(self.bits).count("1")

    def __repr__(self) -> str:
        return f"LayerSet({{{', '.join(map(str, self))}}}, T={self.population})"


class ValueOracle(Protocol):
    """Maps a coalition to a non-negative value; must return 0 for the empty set."""

    def __call__(self, coalition: LayerSet) -> float: ...


class CoalitionCache:
    """Memo table from canonical coalition encoding to oracle value.

    Safe to share between threads: inserts are insert-if-absent under a lock,
    so a stored value is never overwritten.
    """

    def __init__(self):
        self._values: dict[int, float] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._values)

    def __contains__(self, coalition: LayerSet) -> bool:
        return coalition.bits in self._values

    def get(self, coalition: LayerSet) -> float | None:
        return self._values.get(coalition.bits)

    def insert_if_absent(self, coalition: LayerSet, value: float) -> float:
        with self._lock:
            return self._values.setdefault(coalition.bits, value)

    def items(self) -> list[tuple[int, float]]:
        return sorted(self._values.items())


def _call_oracle(oracle: ValueOracle, coalition: LayerSet) -> float:
    try:
        value = float(oracle(coalition))
    except Exception as exc:
        exc.coalition = coalition
        raise
    if not coalition.bits and value != 0.0:
        raise InvalidInputError(f"value oracle returned {value} for the empty coalition")
    return value


def evaluate_cached(cache: CoalitionCache, oracle: ValueOracle, coalition: LayerSet) -> float:
    """Return the oracle value of ``coalition``, evaluating it at most once."""
    value = cache.get(coalition)
    if value is not None:
        with cache._lock:
            cache.hits += 1
        return value
    value = _call_oracle(oracle, coalition)
    with cache._lock:
        cache.misses += 1
    return cache.insert_if_absent(coalition, value)


def evaluate_many(
    cache: CoalitionCache,
    oracle: ValueOracle,
    coalitions: Sequence[LayerSet],
    threads: int = 1,
) -> None:
    """Fill the cache for every coalition in ``coalitions``.

    Missing coalitions are evaluated once each, on up to ``threads`` workers.
    Values are inserted in canonical order so the cache contents never depend on
    scheduling.
    """
    missing: dict[int, LayerSet] = {}
    for c in coalitions:
        if c not in cache and c.bits not in missing:
            missing[c.bits] = c
    todo = [missing[k] for k in sorted(missing)]
    if not todo:
        return
    if threads > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(lambda c: _call_oracle(oracle, c), todo))
    else:
        values = [_call_oracle(oracle, c) for c in todo]
    with cache._lock:
        cache.misses += len(todo)
    for c, v in zip(todo, values):
        cache.insert_if_absent(c, v)


def window_for_layer(t: int, T: int, N: int) -> LayerSet:
    """Contiguous run of ``N`` layers containing ``t``.

    Centered on ``t`` where possible, shifted inward at either end of the stack
    so the window always holds exactly ``N`` layers.
    """
    if T < 1:
        raise InvalidParameterError(f"layer count must be positive, got {T}")
    if N < 1 or N % 2 == 0 or N > T:
        raise InvalidParameterError(f"window size must be odd and in 1..{T}, got {N}")
    if not 1 <= t <= T:
        raise InvalidParameterError(f"layer {t} outside 1..{T}")
    start = min(max(t - (N - 1) // 2, 1), T - N + 1)
    return LayerSet(((1 << N) - 1) << (start - 1), T)


def shapley_weight_exact(s: int, n: int) -> Fraction:
    if n < 1 or not 0 <= s <= n - 1:
        raise InvalidParameterError(f"need 0 <= s <= n-1 and n >= 1, got s={s}, n={n}")
    return Fraction(math.factorial(s) * math.factorial(n - s - 1), math.factorial(n))


def shapley_weight(s: int, n: int) -> float:
    """Normalized Shapley kernel ``s! (n-s-1)! / n!``."""
    if n <= 64:
        return float(shapley_weight_exact(s, n))
    if not 0 <= s <= n - 1:
        raise InvalidParameterError(f"need 0 <= s <= n-1, got s={s}, n={n}")
    return math.exp(math.lgamma(s + 1) + math.lgamma(n - s) - math.lgamma(n + 1))


@dataclass(frozen=True)
class ShapleyReport:
    contributions: tuple[float, ...]
    estimator: str
    window_size: int
    oracle_evaluations: int

    @property
    def T(self) -> int:
        return len(self.contributions)

    @property
    def subsets_per_layer(self) -> int:
        return 2 ** (self.window_size - 1)

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "estimator": self.estimator,
            "window_size": self.window_size,
            "oracle_evaluations": self.oracle_evaluations,
            "contributions": list(self.contributions),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> ShapleyReport:
        try:
            contributions = tuple(float(x) for x in d["contributions"])
            report = cls(contributions, str(d["estimator"]), int(d["window_size"]),
                         int(d["oracle_evaluations"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed Shapley report: {exc}") from exc
        if report.estimator not in ("exact", "windowed") or int(d["T"]) != report.T:
            raise InvalidInputError("malformed Shapley report: bad estimator or T")
        return report

    @classmethod
    def from_json(cls, text: str) -> ShapleyReport:
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"Shapley report is not valid JSON: {exc}") from exc

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def _popcounts(n_bits: int) -> np.ndarray:
    idx = np.arange(1 << n_bits, dtype=np.int64)
    counts = np.zeros_like(idx)
    for b in range(n_bits):
        counts += (idx >> b) & 1
    return counts


def exact_shapley(
    oracle: ValueOracle,
    T: int,
    *,
    max_layers: int = EXACT_MAX_LAYERS,
    threads: int = 1,
    cache: CoalitionCache | None = None,
) -> ShapleyReport:
    """Shapley value of every layer by full enumeration of the 2^T coalitions."""
    if T < 1:
        raise InvalidParameterError(f"layer count must be positive, got {T}")
    if T > max_layers:
        raise BudgetError(
            f"exact Shapley over {T} layers needs 2^{T} coalition evaluations; "
            f"the ceiling is {max_layers} layers"
        )
    cache = CoalitionCache() if cache is None else cache
    before = cache.misses
    everything = [LayerSet(b, T) for b in range(1 << T)]
    evaluate_many(cache, oracle, everything, threads)
    values = np.array([evaluate_cached(cache, oracle, c) for c in everything])

    sizes = _popcounts(T)
    weights = np.array([shapley_weight(s, T) for s in range(T)])
    idx = np.arange(1 << T, dtype=np.int64)
    phi = []
    for t in range(1, T + 1):
        bit = 1 << (t - 1)
        without = idx[(idx & bit) == 0]
        terms = weights[sizes[without]] * (values[without | bit] - values[without])
        phi.append(math.fsum(terms.tolist()))
    return ShapleyReport(tuple(phi), "exact", T, cache.misses - before)


def _window_coalitions(t: int, T: int, N: int) -> tuple[list[int], int]:
    window = window_for_layer(t, T, N)
    others = [layer for layer in window if layer != t]
    rest = window.complement().bits
    subsets = []
    for m in range(1 << (N - 1)):
        s = 0
        for j, layer in enumerate(others):
            if m >> j & 1:
                s |= 1 << (layer - 1)
        subsets.append(s)
    return subsets, rest


def swsv(
    oracle: ValueOracle,
    T: int,
    N: int,
    *,
    threads: int = 1,
    cache: CoalitionCache | None = None,
) -> ShapleyReport:
    """Sliding-window Shapley estimate.

    Layer ``t`` is scored only against coalitions of its ``N``-layer window; the
    layers outside the window stay active throughout. Weights use the window
    size as the player count, so ``N == T`` reproduces :func:`exact_shapley`.
    """
    if T < 1:
        raise InvalidParameterError(f"layer count must be positive, got {T}")
    window_for_layer(1, T, N)
    cache = CoalitionCache() if cache is None else cache
    before = cache.misses
    weights = [shapley_weight(s, N) for s in range(N)]

    plans = [_window_coalitions(t, T, N) for t in range(1, T + 1)]
    needed = []
    for t, (subsets, rest) in enumerate(plans, start=1):
        bit = 1 << (t - 1)
        for s in subsets:
            needed.append(LayerSet(s | rest | bit, T))
            needed.append(LayerSet(s | rest, T))
    evaluate_many(cache, oracle, needed, threads)

    phi = []
    for t, (subsets, rest) in enumerate(plans, start=1):
        bit = 1 << (t - 1)
        terms = []
        for s in subsets:
            with_t = evaluate_cached(cache, oracle, LayerSet(s | rest | bit, T))
            without = evaluate_cached(cache, oracle, LayerSet(s | rest, T))
            terms.append(weights[bin(s).count("1")] * (with_t - without))
        phi.append(math.fsum(terms))
    return ShapleyReport(tuple(phi), "windowed", N, cache.misses - before)


def table_oracle(values: dict[frozenset, float]) -> ValueOracle:
    """Value oracle backed by a table keyed by frozensets of layer indices.

    Coalitions missing from the table are worth 0.
    """

    def oracle(coalition: LayerSet) -> float:
        return values.get(frozenset(coalition), 0.0)

    return oracle
