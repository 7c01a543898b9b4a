"""Retrieval metrics: average precision, precision@k and MAP@k.

Conventions:

* AP divides by the number of relevant items retrieved within the top ``k``,
  not by the number of relevant items in the whole database.
* A query with no relevant item in its top ``k`` scores AP = 0 and still
  counts towards the mean.
* When a query id is also stored in the database its own entry is removed
  from the ranking before truncation.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import index as index_mod
from .errors import DataError, InvalidInputError
from .sampler import LabelStore

DEFAULT_MULTI_LABEL_K = 5000


def _truncate(flags, k: int) -> np.ndarray:
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    return np.asarray(flags, dtype=bool)[:k]


def average_precision(flags, k: int) -> float:
    """AP over the first ``k`` ranked relevance flags.

    >>> average_precision([1, 0, 1, 0], 4)
    0.8333333333333333
    """
    rel = _truncate(flags, k)
    hits = int(rel.sum())
    if hits == 0:
        return 0.0
    ranks = np.flatnonzero(rel) + 1
    return math.fsum(np.arange(1, hits + 1) / ranks) / hits


def precision_at_k(flags, k: int) -> float:
    rel = _truncate(flags, k)
    if rel.size == 0:
        return 0.0
    return float(rel.sum()) / rel.size


def default_k(store: LabelStore) -> int | None:
    """Full ranking for single-label data, top 5000 for multi-label data."""
    return None if store.mode == "single" else DEFAULT_MULTI_LABEL_K


@dataclass(frozen=True)
class EvalResult:
    map: float
    aps: tuple
    query_ids: tuple
    k: int | None
    n_database: int
    length: int


def _db_label_rows(db, store: LabelStore) -> np.ndarray:
    rows = np.empty(len(db), dtype=np.int64)
    for pos, ident in enumerate(db.ids):
        if not isinstance(ident, (int, np.integer)) or not 0 <= ident < len(store):
            raise DataError(f"no labels for database id {ident!r}")
        rows[pos] = ident
    return rows


def query_flags(db, query, query_id, store: LabelStore, k: int | None,
                db_rows: np.ndarray | None = None) -> np.ndarray:
    """Relevance flags of the ranked neighbours of one query."""
    if not isinstance(query_id, (int, np.integer)) or not 0 <= query_id < len(store):
        raise DataError(f"no labels for query id {query_id!r}")
    if db_rows is None:
        db_rows = _db_label_rows(db, store)
    self_pos = db.position_of(query_id)
    depth = None if k is None else k + (self_pos is not None)
    order, _ = index_mod.rank(db, query, depth)
    if self_pos is not None:
        order = order[order != self_pos]
    if k is not None:
        order = order[:k]
    m = store.label_matrix
    return (m[db_rows[order]] & m[query_id]).any(axis=1)


def evaluate(db, queries, query_ids, store: LabelStore, k: int | None = None,
             workers: int = 1) -> EvalResult:
    """MAP of ``queries`` against ``db`` with ground truth from ``store``.

    Args:
        db: a :class:`~tlhash.index.CodeDatabase` whose ids index ``store``.
        queries: ``(Q, W)`` packed words or a sequence of BitCodes.
        query_ids: ids (rows of ``store``) of the queries.
        k: truncation depth; ``None`` ranks the full database.
        workers: thread count for per-query work; output is identical for
            any value.
    """
    query_ids = tuple(query_ids)
    queries = list(queries)
    if len(queries) != len(query_ids):
        raise InvalidInputError(f"{len(queries)} queries but {len(query_ids)} query ids")
    if not queries:
        raise InvalidInputError("no queries")
    db_rows = _db_label_rows(db, store)
    depth = len(db) if k is None else k

    def one(i):
        return average_precision(query_flags(db, queries[i], query_ids[i], store, k, db_rows), depth)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            aps = list(pool.map(one, range(len(queries))))
    else:
        aps = [one(i) for i in range(len(queries))]
    return EvalResult(math.fsum(aps) / len(aps), tuple(aps), query_ids, k, len(db), db.length)


def mean_average_precision(db, queries, query_ids, store: LabelStore, k: int | None = None) -> float:
    return evaluate(db, queries, query_ids, store, k).map


# ---------------------------------------------------------------------------
# Report CSV
# ---------------------------------------------------------------------------


def write_report(result: EvalResult, path) -> None:
    """Per-query rows ``query_id,ap`` followed by ``MAP,<map>,<k>,<N>,<L>``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_id", "ap"])
        for qid, ap in zip(result.query_ids, result.aps):
            w.writerow([qid, repr(float(ap))])
        k = "all" if result.k is None else result.k
        w.writerow(["MAP", repr(float(result.map)), k, result.n_database, result.length])


def read_report(path) -> dict:
    """Parse a report written by :func:`write_report`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["query_id", "ap"] or not rows[-1] or rows[-1][0] != "MAP":
        raise DataError(f"{path}: not an evaluation report")
    _, map_value, k, n, length = rows[-1]
    return {
        "aps": {qid: float(ap) for qid, ap in rows[1:-1]},
        "map": float(map_value),
        "k": None if k == "all" else int(k),
        "n_database": int(n),
        "length": int(length),
    }
