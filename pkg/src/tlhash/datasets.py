"""Feature files, ingestion and the synthetic Gaussian-cluster benchmark."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, InvalidInputError
from .sampler import LabelStore, read_labels, write_labels

FEATURE_MAGIC = b"FVC1"


def write_features(path, X) -> None:
    """FVEC1: ``b"FVC1"``, u32 N, u32 D, then N*D little-endian float32, row-major."""
    X = np.asarray(X)
    if X.ndim != 2:
        raise InvalidInputError("features must be an (N, D) matrix")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", *X.shape))
        fh.write(np.ascontiguousarray(X, dtype="<f4").tobytes())


def read_features(path, dtype=np.float64) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != FEATURE_MAGIC:
        raise DataError(f"{path}: not an FVEC1 feature file")
    n, d = struct.unpack_from("<II", data, 4)
    if len(data) != 12 + 4 * n * d:
        raise DataError(f"{path}: expected {n}x{d} floats, found {(len(data) - 12) // 4}")
    X = np.frombuffer(data, dtype="<f4", offset=12).reshape(n, d)
    return X.astype(dtype)


def parse_feature_rows(lines, source="<input>") -> np.ndarray:
    """Parse text rows of comma or whitespace separated reals into float32."""
    rows = []
    width = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            values = [float(v) for v in line.replace(",", " ").split()]
        except ValueError:
            raise DataError(f"{source}:{lineno}: unparseable number in {raw.strip()!r}") from None
        if not all(np.isfinite(values)):
            raise DataError(f"{source}:{lineno}: non-finite value")
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise DataError(f"{source}:{lineno}: expected {width} values, found {len(values)}")
        rows.append(values)
    if not rows:
        raise DataError(f"{source}: no feature rows")
    X = np.array(rows, dtype=np.float32)
    if not np.all(np.isfinite(X)):
        raise DataError(f"{source}: value overflows float32")
    return X


def ingest(raw_features, raw_labels, out_features, out_labels, mode: str | None = None):
    """Convert a text feature table and label file into FVEC1 + label file.

    Returns:
        ``(N, D, mode)``.
    """
    raw_features = Path(raw_features)
    X = parse_feature_rows(raw_features.read_text().splitlines(), str(raw_features))
    store = read_labels(raw_labels, mode)
    if len(store) != X.shape[0]:
        raise DataError(f"{X.shape[0]} feature rows but {len(store)} labelled images")
    write_features(out_features, X)
    write_labels(store, out_labels)
    return X.shape[0], X.shape[1], store.mode


@dataclass(frozen=True)
class SyntheticDataset:
    """Clustered features with a query / database / training split.

    ``train_idx`` is a subset of ``database_idx``; all index arrays address
    rows of ``features`` and ``store``.
    """

    features: np.ndarray
    store: LabelStore
    query_idx: np.ndarray
    database_idx: np.ndarray
    train_idx: np.ndarray


def simplex_means(n_classes: int, dim: int, distance: float, rng) -> np.ndarray:
    """``n_classes`` points in R^dim, every pair exactly ``distance`` apart, centred at 0."""
    if n_classes > dim:
        raise InvalidInputError("equidistant means need n_classes <= dim")
    corners = np.eye(n_classes) - 1.0 / n_classes
    # random orthonormal embedding of the corner set into R^dim
    basis, _ = np.linalg.qr(rng.normal(size=(dim, n_classes)))
    return distance / np.sqrt(2.0) * corners @ basis.T


def make_synthetic(n_classes: int = 10, dim: int = 64, n_query: int = 1000,
                   n_database: int = 10_000, n_train: int = 5000, separation: float = 4.0,
                   sigma: float = 1.0, seed: int = 0) -> SyntheticDataset:
    """Sample isotropic Gaussian clusters with equidistant means.

    Every pair of cluster means is exactly ``separation * sigma`` apart and
    points are drawn from N(mean, sigma^2 I). Classes are balanced in every
    split and values are rounded to float32 so they survive an FVEC1 round
    trip.
    """
    if min(n_classes, dim, n_query, n_database, n_train) < 1:
        raise InvalidInputError("sizes must be >= 1")
    if n_train > n_database:
        raise InvalidInputError("training images are drawn from the database")
    for n, name in ((n_query, "n_query"), (n_database, "n_database"), (n_train, "n_train")):
        if n % n_classes:
            raise InvalidInputError(f"{name} must be a multiple of n_classes")
    rng = np.random.default_rng(seed)
    means = simplex_means(n_classes, dim, separation * sigma, rng)
    per_class = (n_query + n_database) // n_classes
    labels = np.repeat(np.arange(n_classes), per_class)
    X = means[labels] + rng.normal(0.0, sigma, size=(labels.size, dim))
    perm = rng.permutation(labels.size)
    X, labels = X[perm].astype(np.float32).astype(np.float64), labels[perm]

    query_idx, database_idx, train_idx = [], [], []
    q_per, t_per = n_query // n_classes, n_train // n_classes
    for c in range(n_classes):
        members = np.flatnonzero(labels == c)
        query_idx.append(members[:q_per])
        database_idx.append(members[q_per:])
        train_idx.append(rng.permutation(members[q_per:])[:t_per])
    return SyntheticDataset(
        features=X,
        store=LabelStore.from_labels(labels),
        query_idx=np.sort(np.concatenate(query_idx)),
        database_idx=np.sort(np.concatenate(database_idx)),
        train_idx=np.sort(np.concatenate(train_idx)),
    )
