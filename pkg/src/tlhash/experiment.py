"""One train / encode / evaluate cycle, shared by the CLI, sweeps and demos."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import encoder as enc
from . import index
from .errors import DataError, InvalidInputError
from .evaluation import EvalResult, evaluate
from .sampler import LabelStore
from .trainer import TrainConfig, TrainReport, train


@dataclass(frozen=True)
class Split:
    """Row indices of the query, database and training sets."""

    query_idx: np.ndarray
    database_idx: np.ndarray
    train_idx: np.ndarray

    @classmethod
    def of(cls, dataset) -> "Split":
        return cls(dataset.query_idx, dataset.database_idx, dataset.train_idx)


@dataclass(frozen=True)
class EncoderSpec:
    architecture: str
    code_length: int
    hidden_dim: int = 0
    init_seed: int = 0

    def init(self, input_dim: int) -> enc.EncoderParams:
        return enc.init(self.architecture, input_dim, self.code_length, self.hidden_dim, self.init_seed)


@dataclass(frozen=True)
class CycleResult:
    params: enc.EncoderParams
    report: TrainReport
    evaluation: EvalResult


def write_rows(path, rows) -> None:
    """Index list: one non-negative integer per line."""
    Path(path).write_text("".join(f"{int(r)}\n" for r in rows))


def read_rows(path, n_max: int | None = None) -> np.ndarray:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            value = int(line)
        except ValueError:
            raise DataError(f"{path}:{lineno}: not an integer row index") from None
        if value < 0 or (n_max is not None and value >= n_max):
            raise DataError(f"{path}:{lineno}: row {value} out of range")
        out.append(value)
    return np.array(out, dtype=np.int64)


def subsample(rows, n: int, seed: int) -> np.ndarray:
    """First ``n`` rows of a seeded permutation, returned sorted."""
    rows = np.asarray(rows)
    if not 1 <= n <= len(rows):
        raise InvalidInputError(f"cannot take {n} of {len(rows)} training rows")
    return np.sort(np.random.default_rng(seed).permutation(rows)[:n])


def encode_database(params, features, rows) -> index.CodeDatabase:
    return index.build(enc.encode_rows(params, features[rows]), [int(r) for r in rows], params.code_length)


def evaluate_params(params, features, store: LabelStore, split: Split, k=None, workers: int = 1) -> EvalResult:
    db = encode_database(params, features, split.database_idx)
    queries = enc.encode_rows(params, features[split.query_idx])
    return evaluate(db, queries, [int(q) for q in split.query_idx], store, k=k, workers=workers)


def run_cycle(features, store: LabelStore, split: Split, cfg: TrainConfig, spec: EncoderSpec,
              k=None, workers: int = 1) -> CycleResult:
    """Train on ``split.train_idx``, then evaluate queries against the database."""
    features = np.asarray(features, dtype=np.float64)
    params, report = train(features[split.train_idx], store.subset(split.train_idx), cfg,
                           spec.init(features.shape[1]))
    return CycleResult(params, report, evaluate_params(params, features, store, split, k, workers))


def with_train_size(split: Split, n: int, seed: int) -> Split:
    return replace(split, train_idx=subsample(split.train_idx, n, seed))
