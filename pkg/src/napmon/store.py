"""Deduplicated pattern stores and minimum-Hamming-distance queries.

The store keeps one row per unique pattern in a contiguous (n, words)
uint64 matrix so a query is a vectorized XOR + popcount sweep. Stores are
immutable after build; concurrent read-only queries need no locking.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import BitLengthMismatchError
from .patterns import BinaryPattern, words_for

# Rows per scan chunk: keeps temporaries cache-friendly and gives the
# zero-distance early exit something to act on.
_SCAN_CHUNK = 16384


def _frozen(arr: np.ndarray) -> np.ndarray:
    if arr.flags.writeable:
        arr = arr.copy()
        arr.flags.writeable = False
    return arr


class PatternStore:
    """Unique training patterns for one layer, with multiplicities.

    ``sample_rows`` maps each contributed sample (in build order) to its
    unique row, which is what makes leave-one-out queries well-defined
    after deduplication.
    """

    __slots__ = ("layer_name", "bit_len", "words", "multiplicities", "sample_rows")

    def __init__(
        self,
        layer_name: str,
        bit_len: int,
        words: np.ndarray,
        multiplicities: np.ndarray,
        sample_rows: np.ndarray | None = None,
    ):
        words = np.ascontiguousarray(words, dtype=np.uint64)
        multiplicities = np.asarray(multiplicities, dtype=np.int64)
        if words.ndim != 2 or words.shape[1] != words_for(bit_len):
            raise ValueError(
                f"words matrix {words.shape} does not match bit_len {bit_len}"
            )
        if len(multiplicities) != len(words):
            raise ValueError("one multiplicity per unique pattern required")
        if len(words) == 0:
            raise ValueError("a pattern store cannot be empty")
        if (multiplicities < 1).any():
            raise ValueError("multiplicities must be positive")
        if sample_rows is None:
            sample_rows = np.repeat(np.arange(len(words)), multiplicities)
        sample_rows = np.asarray(sample_rows, dtype=np.int64)
        words, multiplicities, sample_rows = (
            _frozen(words), _frozen(multiplicities), _frozen(sample_rows)
        )
        self.layer_name = layer_name
        self.bit_len = bit_len
        self.words = words
        self.multiplicities = multiplicities
        self.sample_rows = sample_rows

    @property
    def unique_count(self) -> int:
        return len(self.words)

    @property
    def total_count(self) -> int:
        return int(self.multiplicities.sum())

    def pattern(self, index: int) -> BinaryPattern:
        """Unique pattern at ``index`` (insertion order of first occurrence)."""
        return BinaryPattern(self.words[index], self.bit_len)

    @property
    def patterns(self) -> list[BinaryPattern]:
        return [self.pattern(i) for i in range(self.unique_count)]

    def __len__(self) -> int:
        return self.unique_count

    def __repr__(self) -> str:
        return (
            f"PatternStore(layer={self.layer_name!r}, bit_len={self.bit_len}, "
            f"unique={self.unique_count}, total={self.total_count})"
        )


def build_store_from_words(
    words: np.ndarray, bit_len: int, layer_name: str = ""
) -> PatternStore:
    """Build a store from an (n, words) uint64 matrix of packed patterns.

    Duplicate rows are merged; first-occurrence order is preserved.
    """
    words = np.ascontiguousarray(words, dtype=np.uint64)
    if len(words) == 0:
        raise ValueError("cannot build a store from zero patterns")
    if words.shape[1] != words_for(bit_len):
        raise ValueError(f"words matrix {words.shape} does not match bit_len {bit_len}")
    row_of: dict[bytes, int] = {}
    unique_idx: list[int] = []
    counts: list[int] = []
    sample_rows = np.empty(len(words), dtype=np.int64)
    for i, raw in enumerate(words):
        key = raw.tobytes()
        row = row_of.get(key)
        if row is None:
            row = len(unique_idx)
            row_of[key] = row
            unique_idx.append(i)
            counts.append(1)
        else:
            counts[row] += 1
        sample_rows[i] = row
    return PatternStore(
        layer_name,
        bit_len,
        words[unique_idx],
        np.asarray(counts, dtype=np.int64),
        sample_rows,
    )


def build_store(
    patterns: Sequence[BinaryPattern], layer_name: str = ""
) -> PatternStore:
    """Build a store from a sequence of patterns (uniform bit length)."""
    if len(patterns) == 0:
        raise ValueError("cannot build a store from zero patterns")
    bit_len = patterns[0].bit_len
    for i, p in enumerate(patterns):
        if p.bit_len != bit_len:
            raise BitLengthMismatchError(
                f"pattern {i} has bit_len {p.bit_len}, expected {bit_len}"
            )
    matrix = np.vstack([p.words for p in patterns]) if patterns[0].words.size else (
        np.zeros((len(patterns), 0), dtype=np.uint64)
    )
    return build_store_from_words(matrix, bit_len, layer_name)


def _check_query(store: PatternStore, bit_len: int, what: str = "query") -> None:
    if bit_len != store.bit_len:
        raise BitLengthMismatchError(
            f"{what} bit_len {bit_len} does not match store "
            f"'{store.layer_name}' bit_len {store.bit_len}"
        )


def _scan_words(store: PatternStore, qwords: np.ndarray) -> tuple[int, int]:
    """Linear XOR/popcount scan. Returns (d_min, lowest minimizer row)."""
    best = store.bit_len + 1
    best_idx = -1
    for start in range(0, store.unique_count, _SCAN_CHUNK):
        chunk = store.words[start : start + _SCAN_CHUNK]
        d = np.bitwise_count(chunk ^ qwords).sum(axis=1, dtype=np.int64)
        pos = int(d.argmin())
        if int(d[pos]) < best:
            best = int(d[pos])
            best_idx = start + pos
            if best == 0:
                break
    return best, best_idx


def nearest_distance(store: PatternStore, query: BinaryPattern) -> tuple[int, int]:
    """Minimum Hamming distance from ``query`` to the store.

    Returns ``(d_min, index)`` where ``index`` is the lowest-index
    minimizer among the unique stored patterns. The scan exits early once
    a running minimum of zero is found.
    """
    _check_query(store, query.bit_len)
    return _scan_words(store, query.words)


def batch_nearest(
    store: PatternStore, queries: Sequence[BinaryPattern]
) -> np.ndarray:
    """Elementwise :func:`nearest_distance` distances, order preserved."""
    out = np.empty(len(queries), dtype=np.int64)
    for i, q in enumerate(queries):
        if q.bit_len != store.bit_len:
            raise BitLengthMismatchError(
                f"query {i} bit_len {q.bit_len} does not match store "
                f"'{store.layer_name}' bit_len {store.bit_len}"
            )
        out[i] = _scan_words(store, q.words)[0]
    return out


def batch_nearest_words(store: PatternStore, qwords: np.ndarray) -> np.ndarray:
    """Distance sweep for a (n, words) matrix of packed queries."""
    qwords = np.ascontiguousarray(qwords, dtype=np.uint64)
    if qwords.ndim != 2 or qwords.shape[1] != words_for(store.bit_len):
        raise BitLengthMismatchError(
            f"query matrix {qwords.shape} does not match store "
            f"'{store.layer_name}' bit_len {store.bit_len}"
        )
    out = np.empty(len(qwords), dtype=np.int64)
    for i in range(len(qwords)):
        out[i] = _scan_words(store, qwords[i])[0]
    return out


def loo_nearest(store: PatternStore, sample_index: int) -> int:
    """Leave-one-out distance for the sample at build position ``sample_index``.

    Excludes exactly one copy of the sample's own pattern, so a duplicated
    pattern yields 0. Undefined for single-sample stores.
    """
    if store.total_count == 1:
        raise ValueError("leave-one-out undefined for a single-sample store")
    if not 0 <= sample_index < len(store.sample_rows):
        raise IndexError(
            f"sample index {sample_index} out of range 0..{len(store.sample_rows) - 1}"
        )
    row = int(store.sample_rows[sample_index])
    if store.multiplicities[row] > 1:
        return 0
    d = np.bitwise_count(store.words ^ store.words[row]).sum(axis=1, dtype=np.int64)
    d[row] = store.bit_len + 1
    return int(d.min())


def loo_all(store: PatternStore) -> np.ndarray:
    """Leave-one-out distances for every contributed sample, build order.

    Equivalent to ``[loo_nearest(store, i) for i in range(total_count)]``
    but computed once per unique row.
    """
    if store.total_count == 1:
        raise ValueError("leave-one-out undefined for a single-sample store")
    n = store.unique_count
    per_row = np.zeros(n, dtype=np.int64)
    lone = np.flatnonzero(store.multiplicities == 1)
    if lone.size:
        # Pairwise chunking keeps the distance temporaries bounded.
        words = store.words
        n_words = max(1, words.shape[1])
        chunk = max(1, (8 << 20) // (n * n_words * 8))
        sentinel = store.bit_len + 1
        for start in range(0, lone.size, chunk):
            rows = lone[start : start + chunk]
            d = np.bitwise_count(words[rows, None, :] ^ words[None, :, :]).sum(
                axis=2, dtype=np.int64
            )
            d[np.arange(len(rows)), rows] = sentinel
            per_row[rows] = d.min(axis=1)
    return per_row[store.sample_rows]
