"""Bit-packed binary hash codes.

A code of ``L`` bits is stored LSB-first in ``ceil(L / 64)`` unsigned 64-bit
words: bit ``k`` of the concatenated words is 1 when dimension ``k`` is +1
and 0 when it is -1. Bits at positions ``>= L`` are always zero, so XOR and
popcount over whole words never need masking.

Two layers are provided. :class:`BitCode` is a single immutable code used by
the scalar API (``pack``, ``unpack``, ``hamming``, ...). The ``*_rows``
functions work on ``(N, W)`` uint64 matrices and back the index and the
trainer, where per-object overhead would dominate.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError, InvalidInputError, InvalidSignError

MAX_BITS = 4096
WORD_BITS = 64
CODE_MAGIC = b"BHC1"


def n_words(length: int) -> int:
    return (length + WORD_BITS - 1) // WORD_BITS


def _check_length(length: int) -> None:
    if not 1 <= length <= MAX_BITS:
        raise DimensionError(f"code length must be in [1, {MAX_BITS}], got {length}")


@dataclass(frozen=True, eq=False)
class BitCode:
    """An immutable ``length``-bit code packed into uint64 words."""

    length: int
    words: np.ndarray
    # the same bits as one Python int, for fast scalar operations
    value: int = field(init=False, repr=False)

    def __post_init__(self):
        _check_length(self.length)
        words = np.array(self.words, dtype=np.uint64).reshape(-1)
        if words.shape[0] != n_words(self.length):
            raise DimensionError(
                f"{self.length}-bit code needs {n_words(self.length)} words, got {words.shape[0]}"
            )
        tail = self.length % WORD_BITS
        if tail and int(words[-1]) >> tail:
            raise InvalidInputError("padding bits beyond the code length must be zero")
        words.setflags(write=False)
        object.__setattr__(self, "words", words)
        object.__setattr__(self, "value", int.from_bytes(words.astype("<u8").tobytes(), "little"))

    def __eq__(self, other):
        if not isinstance(other, BitCode):
            return NotImplemented
        return self.length == other.length and np.array_equal(self.words, other.words)

    def __hash__(self):
        return hash((self.length, self.words.tobytes()))

    def __repr__(self):
        bits = "".join("1" if s > 0 else "0" for s in unpack(self))
        return f"BitCode(length={self.length}, bits={bits!r})"


# ---------------------------------------------------------------------------
# Row-wise (matrix) primitives
# ---------------------------------------------------------------------------


def pack_bits_rows(bits: np.ndarray) -> np.ndarray:
    """Pack an ``(N, L)`` boolean matrix into ``(N, W)`` uint64 words."""
    bits = np.asarray(bits, dtype=bool)
    if bits.ndim != 2:
        raise DimensionError("expected a 2-D bit matrix")
    n, length = bits.shape
    _check_length(length)
    width = n_words(length)
    padded = np.zeros((n, width * WORD_BITS), dtype=bool)
    padded[:, :length] = bits
    packed = np.packbits(padded.reshape(n, width, WORD_BITS), axis=-1, bitorder="little")
    return np.ascontiguousarray(packed).view("<u8").reshape(n, width).astype(np.uint64)


def unpack_bits_rows(words: np.ndarray, length: int) -> np.ndarray:
    """Inverse of :func:`pack_bits_rows`; returns an ``(N, L)`` bool matrix."""
    _check_length(length)
    words = np.ascontiguousarray(words, dtype="<u8")
    if words.ndim != 2 or words.shape[1] != n_words(length):
        raise DimensionError(f"expected (N, {n_words(length)}) words for {length} bits")
    as_bytes = words.view(np.uint8).reshape(words.shape[0], -1)
    bits = np.unpackbits(as_bytes, axis=-1, bitorder="little")
    return bits[:, :length].astype(bool)


def pack_rows(signs: np.ndarray) -> np.ndarray:
    """Pack an ``(N, L)`` matrix of +/-1 entries into uint64 words."""
    signs = np.asarray(signs)
    if signs.ndim != 2 or signs.shape[1] == 0:
        raise DimensionError("expected a non-empty (N, L) sign matrix")
    if not np.all((signs == 1) | (signs == -1)):
        raise InvalidSignError("sign entries must be +1 or -1")
    return pack_bits_rows(signs == 1)


def unpack_rows(words: np.ndarray, length: int) -> np.ndarray:
    """Unpack words into an ``(N, L)`` int8 matrix of +/-1."""
    bits = unpack_bits_rows(words, length)
    return np.where(bits, 1, -1).astype(np.int8)


def sgn(u: np.ndarray) -> np.ndarray:
    """Elementwise sign with ``sgn(0) = -1``, returned as float64 +/-1."""
    return np.where(np.asarray(u) > 0, 1.0, -1.0)


def sign_quantize_rows(U: np.ndarray) -> np.ndarray:
    """Quantize an ``(N, L)`` real matrix to packed codes (``u > 0`` -> bit set)."""
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 2:
        raise DimensionError("expected an (N, L) matrix of relaxed codes")
    if not np.all(np.isfinite(U)):
        raise InvalidInputError("relaxed codes must be finite")
    return pack_bits_rows(U > 0)


def popcount(words: np.ndarray) -> np.ndarray:
    return np.bitwise_count(np.asarray(words, dtype=np.uint64))


def hamming_rows(database: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Hamming distance from one packed query to every row of ``database``.

    Args:
        database: ``(N, W)`` uint64 words.
        query: ``(W,)`` uint64 words.

    Returns:
        ``(N,)`` int64 distances.
    """
    database = np.asarray(database, dtype=np.uint64)
    query = np.asarray(query, dtype=np.uint64).reshape(-1)
    if database.ndim != 2 or database.shape[1] != query.shape[0]:
        raise DimensionError("query and database word counts differ")
    return popcount(database ^ query).sum(axis=1, dtype=np.int64)


# ---------------------------------------------------------------------------
# Scalar API
# ---------------------------------------------------------------------------


def pack(signs) -> BitCode:
    """Pack a sequence of +1/-1 into a :class:`BitCode`.

    >>> pack([1, -1, 1, -1]).words[0]
    np.uint64(5)
    """
    arr = np.asarray(signs)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidSignError("signs must be a non-empty 1-D sequence")
    return BitCode(arr.size, pack_rows(arr[None, :])[0])


def unpack(code: BitCode) -> np.ndarray:
    return unpack_rows(code.words[None, :], code.length)[0]


def sign_quantize(u) -> BitCode:
    """Binarize a relaxed code: +1 where ``u > 0``, -1 otherwise (zero included)."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 1:
        raise DimensionError("relaxed code must be 1-D")
    return BitCode(u.size, sign_quantize_rows(u[None, :])[0])


def _check_same_length(a: BitCode, b: BitCode) -> None:
    if a.length != b.length:
        raise DimensionError(f"code lengths differ: {a.length} vs {b.length}")


def hamming(a: BitCode, b: BitCode) -> int:
    _check_same_length(a, b)
    return (a.value ^ b.value).bit_count()


def theta_binary(a: BitCode, b: BitCode) -> float:
    """Half the inner product of two +/-1 codes.

    Each coordinate contributes +1 when the signs agree and -1 otherwise, so
    the inner product is (agreeing bits) - (disagreeing bits). Both counts
    are exact integers.
    """
    _check_same_length(a, b)
    mask = (1 << a.length) - 1
    agree = (~(a.value ^ b.value) & mask).bit_count()
    disagree = ((a.value ^ b.value) & mask).bit_count()
    return (agree - disagree) / 2


# ---------------------------------------------------------------------------
# BHC1 file format
# ---------------------------------------------------------------------------


def write_codes(path, words: np.ndarray, length: int) -> None:
    """Write packed codes as a BHC1 file.

    Layout: ``b"BHC1"``, u32 N, u32 L (little-endian), then N records of
    ``ceil(L/64)`` little-endian u64 words.
    """
    _check_length(length)
    words = np.asarray(words, dtype=np.uint64)
    if words.ndim != 2 or words.shape[1] != n_words(length):
        raise DimensionError(f"expected (N, {n_words(length)}) words for {length} bits")
    with open(path, "wb") as fh:
        fh.write(CODE_MAGIC)
        fh.write(struct.pack("<II", words.shape[0], length))
        fh.write(np.ascontiguousarray(words, dtype="<u8").tobytes())


def read_codes(path) -> tuple[np.ndarray, int]:
    """Read a BHC1 file; returns ``(words, length)``."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != CODE_MAGIC:
        raise DataError(f"{path}: not a BHC1 code file")
    count, length = struct.unpack_from("<II", data, 4)
    try:
        _check_length(length)
    except DimensionError as exc:
        raise DataError(f"{path}: {exc}") from None
    width = n_words(length)
    body = data[12:]
    if len(body) != count * width * 8:
        raise DataError(f"{path}: expected {count * width * 8} payload bytes, found {len(body)}")
    words = np.frombuffer(body, dtype="<u8").reshape(count, width).astype(np.uint64)
    tail = length % WORD_BITS
    if tail and count and np.any(words[:, -1] >> np.uint64(tail)):
        raise DataError(f"{path}: non-zero padding bits")
    return words, length
