"""Bit-packed binary activation patterns and exact Hamming distance.

Bit layout: bit ``j`` of a pattern lives in 64-bit word ``j // 64`` at
in-word position ``j % 64`` (little-endian within the word). Padding bits
at positions >= ``bit_len`` are forced to zero at construction, so the
XOR/popcount hot loop never needs to mask the last word.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import BitLengthMismatchError

WORD_BITS = 64


def words_for(bit_len: int) -> int:
    """Number of 64-bit words needed to hold ``bit_len`` bits."""
    return (bit_len + WORD_BITS - 1) // WORD_BITS


def tail_mask(bit_len: int) -> np.uint64:
    """Mask of valid bits in the last word (all-ones when it is full)."""
    rem = bit_len % WORD_BITS
    if rem == 0:
        return np.uint64(0xFFFFFFFFFFFFFFFF)
    return np.uint64((1 << rem) - 1)


class BinaryPattern:
    """Immutable bit-packed binary vector of fixed length.

    Equality requires equal ``bit_len`` and identical words; instances are
    hashable and safe to share across threads.
    """

    __slots__ = ("words", "bit_len")

    def __init__(self, words: np.ndarray, bit_len: int):
        words = np.ascontiguousarray(words, dtype=np.uint64)
        if words.ndim != 1:
            raise ValueError(f"words must be 1-D, got shape {words.shape}")
        if bit_len < 0:
            raise ValueError(f"bit_len must be >= 0, got {bit_len}")
        if len(words) != words_for(bit_len):
            raise ValueError(
                f"bit_len {bit_len} needs {words_for(bit_len)} words, got {len(words)}"
            )
        if bit_len % WORD_BITS != 0 and words.size:
            if words[-1] & ~tail_mask(bit_len):
                raise ValueError("padding bits beyond bit_len must be zero")
        if words.flags.writeable:
            words = words.copy()
            words.flags.writeable = False
        object.__setattr__(self, "words", words)
        object.__setattr__(self, "bit_len", bit_len)

    def __setattr__(self, name, value):
        raise AttributeError("BinaryPattern is immutable")

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryPattern):
            return NotImplemented
        return self.bit_len == other.bit_len and np.array_equal(self.words, other.words)

    def __hash__(self) -> int:
        return hash((self.bit_len, self.words.tobytes()))

    def __repr__(self) -> str:
        return f"BinaryPattern(bit_len={self.bit_len}, popcount={self.popcount()})"

    def popcount(self) -> int:
        """Number of set bits."""
        return int(np.bitwise_count(self.words).sum())

    def to_bits(self) -> np.ndarray:
        """Unpack to a uint8 array of 0/1 values, length ``bit_len``."""
        if self.bit_len == 0:
            return np.zeros(0, dtype=np.uint8)
        raw = self.words.astype("<u8").view(np.uint8)
        return np.unpackbits(raw, bitorder="little")[: self.bit_len]


def pack_rows(bits: np.ndarray) -> np.ndarray:
    """Pack a (n, L) array of 0/1 values into a (n, words) uint64 matrix."""
    bits = np.asarray(bits)
    if bits.ndim != 2:
        raise ValueError(f"expected a 2-D bit array, got shape {bits.shape}")
    n, bit_len = bits.shape
    n_words = words_for(bit_len)
    if bit_len == 0:
        return np.zeros((n, 0), dtype=np.uint64)
    packed = np.packbits(bits.astype(np.uint8, copy=False), axis=1, bitorder="little")
    byte_width = n_words * 8
    if packed.shape[1] < byte_width:
        pad = np.zeros((n, byte_width - packed.shape[1]), dtype=np.uint8)
        packed = np.hstack([packed, pad])
    words = packed.view("<u8")
    return words.astype(np.uint64, copy=False)


def pack(bits: Sequence[int] | Iterable[int]) -> BinaryPattern:
    """Pack a sequence of 0/1 values into a pattern.

    Empty input yields the zero-length pattern.
    """
    arr = np.asarray(list(bits) if not isinstance(bits, np.ndarray) else bits)
    if arr.size == 0:
        arr = arr.reshape(0)
    if arr.ndim != 1:
        raise ValueError(f"pack() expects a flat bit sequence, got shape {arr.shape}")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError("pack() accepts only 0/1 elements")
    words = pack_rows(arr.reshape(1, -1))[0]
    return BinaryPattern(words, arr.shape[0])


def unpack(pattern: BinaryPattern) -> np.ndarray:
    """Inverse of :func:`pack`: per-bit 0/1 array of length ``bit_len``."""
    return pattern.to_bits()


def hamming(a: BinaryPattern, b: BinaryPattern) -> int:
    """Exact Hamming distance: number of differing bit positions.

    Computed as word-wise XOR followed by population count. Raises
    :class:`BitLengthMismatchError` when lengths differ (patterns from
    incompatible layers).
    """
    if a.bit_len != b.bit_len:
        raise BitLengthMismatchError(
            f"bit lengths differ: {a.bit_len} vs {b.bit_len} "
            "(patterns from incompatible layers?)"
        )
    return int(np.bitwise_count(a.words ^ b.words).sum())
