"""Exhaustive Hamming-distance search over a packed code database.

Rankings sort by distance, then by insertion position, so every query has
exactly one correct answer. MAP depends on tie order, and this keeps it
reproducible.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codes import BitCode, hamming_rows, n_words, read_codes, write_codes
from .errors import DataError, DimensionError, InvalidInputError


@dataclass(frozen=True, eq=False)
class CodeDatabase:
    words: np.ndarray
    length: int
    ids: tuple

    def __len__(self):
        return self.words.shape[0]

    def __eq__(self, other):
        if not isinstance(other, CodeDatabase):
            return NotImplemented
        return (self.length == other.length and self.ids == other.ids
                and np.array_equal(self.words, other.words))

    __hash__ = None

    def code(self, position: int) -> BitCode:
        return BitCode(self.length, self.words[position])

    def position_of(self, ident):
        return self._positions.get(ident)

    @property
    def _positions(self):
        cache = self.__dict__.get("_pos_cache")
        if cache is None:
            cache = {ident: k for k, ident in enumerate(self.ids)}
            object.__setattr__(self, "_pos_cache", cache)
        return cache


def build(codes, ids=None, length: int | None = None) -> CodeDatabase:
    """Create a database from codes and parallel identifiers.

    Args:
        codes: a sequence of :class:`BitCode`, or an ``(N, W)`` uint64 word
            matrix together with ``length``.
        ids: external identifiers; defaults to ``0..N-1``.
        length: code length in bits, required for word matrices.
    """
    if isinstance(codes, np.ndarray):
        if length is None:
            raise InvalidInputError("length is required when passing a word matrix")
        words = np.asarray(codes, dtype=np.uint64)
        if words.ndim != 2 or words.shape[1] != n_words(length):
            raise DimensionError(f"expected (N, {n_words(length)}) words for {length} bits")
    else:
        codes = list(codes)
        if not codes:
            raise InvalidInputError("database must not be empty")
        lengths = {c.length for c in codes}
        if len(lengths) != 1:
            raise DimensionError(f"mixed code lengths: {sorted(lengths)}")
        length = lengths.pop()
        words = np.stack([c.words for c in codes])
    if words.shape[0] == 0:
        raise InvalidInputError("database must not be empty")
    ids = tuple(range(words.shape[0])) if ids is None else tuple(ids)
    if len(ids) != words.shape[0]:
        raise DimensionError(f"{words.shape[0]} codes but {len(ids)} ids")
    if len(set(ids)) != len(ids):
        raise InvalidInputError("duplicate id in database")
    words = np.array(words, dtype=np.uint64)
    words.setflags(write=False)
    return CodeDatabase(words, int(length), ids)


def _query_words(db: CodeDatabase, query) -> np.ndarray:
    if isinstance(query, BitCode):
        if query.length != db.length:
            raise DimensionError(f"query has {query.length} bits, database {db.length}")
        return query.words
    words = np.asarray(query, dtype=np.uint64).reshape(-1)
    if words.shape[0] != db.words.shape[1]:
        raise DimensionError("query word count does not match database")
    return words


def rank(db: CodeDatabase, query, k: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Positions and distances of the ``k`` nearest codes (all when ``k`` is None)."""
    n = len(db)
    k = n if k is None else int(k)
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    dist = hamming_rows(db.words, _query_words(db, query))
    if k >= n or k >= n // 4:
        order = np.argsort(dist, kind="stable")[:k]
    else:
        # distance-major, position-minor key: unique, so partition + sort is exact
        key = dist * n + np.arange(n, dtype=np.int64)
        top = np.argpartition(key, k - 1)[:k]
        order = top[np.argsort(key[top])]
    return order, dist[order]


def search(db: CodeDatabase, query, k: int) -> list[tuple]:
    """Return up to ``k`` ``(id, distance)`` pairs, nearest first."""
    order, dist = rank(db, query, k)
    return [(db.ids[i], int(d)) for i, d in zip(order, dist)]


def batch_search(db: CodeDatabase, queries, k: int, workers: int = 1) -> list[list[tuple]]:
    """Run :func:`search` for every query; ``workers > 1`` uses a thread pool.

    Results are returned in query order regardless of ``workers``.
    """
    queries = list(queries) if not isinstance(queries, np.ndarray) else list(np.atleast_2d(queries))
    if workers <= 1:
        return [search(db, q, k) for q in queries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda q: search(db, q, k), queries))


# ---------------------------------------------------------------------------
# Persistence: BHC1 codes + one id per line
# ---------------------------------------------------------------------------


def save(db: CodeDatabase, code_path, id_path=None) -> None:
    code_path = Path(code_path)
    id_path = Path(id_path) if id_path is not None else code_path.with_suffix(".ids")
    write_codes(code_path, db.words, db.length)
    id_path.write_text("".join(f"{ident}\n" for ident in db.ids))


def _parse_id(text: str):
    try:
        value = int(text)
    except ValueError:
        return text
    return value if str(value) == text else text


def load(code_path, id_path=None) -> CodeDatabase:
    code_path = Path(code_path)
    id_path = Path(id_path) if id_path is not None else code_path.with_suffix(".ids")
    words, length = read_codes(code_path)
    ids = id_path.read_text().splitlines()
    if len(ids) != words.shape[0]:
        raise DataError(f"{id_path}: {len(ids)} ids for {words.shape[0]} codes")
    ids = [_parse_id(i) for i in ids]
    try:
        return build(words, ids, length)
    except (InvalidInputError, DimensionError) as exc:
        raise DataError(f"{code_path}: {exc}") from None
