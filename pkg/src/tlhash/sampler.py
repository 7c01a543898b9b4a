"""Label storage, ground-truth similarity and triplet sampling.

Single-label data: two images are similar when their labels are equal.
Multi-label data: two images are similar when their label sets intersect.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, InfeasibleSamplingError, InvalidInputError

MODES = ("single", "multi")


@dataclass(frozen=True, eq=False)
class LabelStore:
    """Per-image label sets plus derived lookup tables.

    Build with :meth:`from_labels` (one label per image) or :meth:`from_sets`.
    """

    mode: str
    labels: tuple
    _matrix: np.ndarray = field(init=False, repr=False)
    _vocab: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}")
        labels = tuple(frozenset(int(x) for x in s) for s in self.labels)
        if not labels:
            raise InvalidInputError("label store is empty")
        for i, s in enumerate(labels):
            if not s:
                raise InvalidInputError(f"image {i} has no labels")
            if self.mode == "single" and len(s) != 1:
                raise InvalidInputError(f"image {i} has {len(s)} labels in single-label mode")
        vocab = tuple(sorted(set().union(*labels)))
        col = {lab: j for j, lab in enumerate(vocab)}
        matrix = np.zeros((len(labels), len(vocab)), dtype=bool)
        for i, s in enumerate(labels):
            matrix[i, [col[x] for x in s]] = True
        matrix.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_matrix", matrix)
        object.__setattr__(self, "_vocab", vocab)

    @classmethod
    def from_labels(cls, labels) -> "LabelStore":
        return cls("single", tuple((int(x),) for x in np.asarray(labels).reshape(-1)))

    @classmethod
    def from_sets(cls, sets, mode: str | None = None) -> "LabelStore":
        sets = [frozenset(s) for s in sets]
        if mode is None:
            mode = "single" if all(len(s) == 1 for s in sets) else "multi"
        return cls(mode, tuple(sets))

    def __len__(self):
        return len(self.labels)

    @property
    def label_matrix(self) -> np.ndarray:
        """``(N, C)`` boolean membership matrix; columns follow sorted label ids."""
        return self._matrix

    def subset(self, indices) -> "LabelStore":
        return LabelStore(self.mode, tuple(self.labels[i] for i in np.asarray(indices)))

    def single_labels(self) -> np.ndarray:
        if self.mode != "single":
            raise InvalidInputError("store is multi-label")
        return np.array([next(iter(s)) for s in self.labels], dtype=np.int64)


def _check_index(store: LabelStore, i: int) -> int:
    i = int(i)
    if not 0 <= i < len(store):
        raise IndexError(f"image index {i} out of range for {len(store)} images")
    return i


def similar(store: LabelStore, i: int, j: int) -> bool:
    a = store.labels[_check_index(store, i)]
    b = store.labels[_check_index(store, j)]
    return not a.isdisjoint(b)


def relevance(store: LabelStore, i: int, others) -> np.ndarray:
    """Vectorized ``similar(store, i, j)`` for every ``j`` in ``others``."""
    i = _check_index(store, i)
    others = np.asarray(others, dtype=np.int64)
    if others.size and (others.min() < 0 or others.max() >= len(store)):
        raise IndexError("image index out of range")
    m = store.label_matrix
    return (m[others] & m[i]).any(axis=1)


def relevance_between(query_store: LabelStore, qi: int, db_store: LabelStore, db_rows=None) -> np.ndarray:
    """Relevance of database rows to query ``qi`` when queries and database have separate stores."""
    labels = query_store.labels[qi]
    vocab = db_store._vocab
    cols = [k for k, lab in enumerate(vocab) if lab in labels]
    m = db_store.label_matrix if db_rows is None else db_store.label_matrix[db_rows]
    if not cols:
        return np.zeros(m.shape[0], dtype=bool)
    return m[:, cols].any(axis=1)


def _similarity_counts(store: LabelStore, chunk: int = 2048) -> np.ndarray:
    """Number of images similar to each image, itself included."""
    m = store.label_matrix.astype(np.float32)
    counts = np.empty(len(store), dtype=np.int64)
    for start in range(0, len(store), chunk):
        block = m[start:start + chunk] @ m.T
        counts[start:start + chunk] = (block > 0).sum(axis=1)
    return counts


def eligible_queries(store: LabelStore) -> np.ndarray:
    """Images that have at least one positive and at least one negative."""
    n = len(store)
    if store.mode == "single":
        labels = store.single_labels()
        _, inverse, sizes = np.unique(labels, return_inverse=True, return_counts=True)
        class_size = sizes[inverse]
        return np.flatnonzero((class_size >= 2) & (class_size < n))
    counts = _similarity_counts(store)
    return np.flatnonzero((counts >= 2) & (counts < n))


def sample_triplets(store: LabelStore, M: int, seed: int) -> np.ndarray:
    """Draw ``M`` triplets with replacement.

    The query is uniform over eligible images, the positive uniform over the
    images similar to the query (excluding itself) and the negative uniform
    over the images dissimilar to it.

    Returns:
        ``(M, 3)`` int64 array of ``(q, p, n)`` rows.
    """
    if M < 1:
        raise InvalidInputError("M must be >= 1")
    eligible = eligible_queries(store)
    if eligible.size == 0:
        raise InfeasibleSamplingError("no image has both a positive and a negative")
    rng = np.random.default_rng(seed)
    q = eligible[rng.integers(0, eligible.size, size=M)]
    if store.mode == "single":
        return _sample_single(store, q, rng)
    return _sample_multi(store, q, rng)


def _sample_single(store, q, rng):
    labels = store.single_labels()
    order = np.argsort(labels, kind="stable")
    sorted_labels = labels[order]
    classes, starts, sizes = np.unique(sorted_labels, return_index=True, return_counts=True)
    n = len(labels)
    cls = np.searchsorted(classes, labels[q])
    start, size = starts[cls], sizes[cls]
    # position of q inside its class block of `order`
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    q_pos = rank[q] - start

    off = rng.integers(0, size - 1)
    off = off + (off >= q_pos)
    p = order[start + off]

    # negatives: the sorted order with the query's class block cut out
    off = rng.integers(0, n - size)
    off = off + size * (off >= start)
    neg = order[off]
    return np.stack([q, p, neg], axis=1).astype(np.int64)


def _sample_multi(store, q, rng):
    m = store.label_matrix
    out = np.empty((len(q), 3), dtype=np.int64)
    for k, qi in enumerate(q):
        sim = (m & m[qi]).any(axis=1)
        sim[qi] = False
        pos = np.flatnonzero(sim)
        sim[qi] = True
        neg = np.flatnonzero(~sim)
        out[k] = qi, pos[rng.integers(pos.size)], neg[rng.integers(neg.size)]
    return out


# ---------------------------------------------------------------------------
# Label files: "index,label;label;..." per line
# ---------------------------------------------------------------------------


def read_labels(path, mode: str | None = None) -> LabelStore:
    """Parse a label file. Mode is inferred unless given explicitly."""
    entries = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            idx_text, labels_text = line.split(",", 1)
            idx = int(idx_text)
            labels = frozenset(int(x) for x in labels_text.split(";") if x.strip())
        except ValueError:
            raise DataError(f"{path}:{lineno}: malformed label line {raw!r}") from None
        if not labels:
            raise DataError(f"{path}:{lineno}: image {idx} has no labels")
        if idx in entries:
            raise DataError(f"{path}:{lineno}: duplicate index {idx}")
        entries[idx] = labels
    if not entries:
        raise DataError(f"{path}: no labels")
    if sorted(entries) != list(range(len(entries))):
        raise DataError(f"{path}: indices must cover 0..{len(entries) - 1}")
    sets = [entries[i] for i in range(len(entries))]
    try:
        return LabelStore.from_sets(sets, mode)
    except InvalidInputError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_labels(store: LabelStore, path) -> None:
    with open(path, "w") as fh:
        for i, labels in enumerate(store.labels):
            fh.write(f"{i},{';'.join(str(x) for x in sorted(labels))}\n")
