"""Minibatch SGD for the triplet-likelihood hashing objective."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import encoder as enc
from .errors import DataError, DimensionError, DivergenceError, InvalidInputError
from .loss import QUANTIZATION_MODES, LossConfig, as_triplets, loss_and_grad, loss_terms
from .sampler import LabelStore, sample_triplets

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("epoch", "nll_mean", "qerr_mean", "lr", "seconds")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.

    ``alpha=None`` means half the code length. ``triplets_per_epoch`` and
    ``batch_size`` have no defaults on purpose: there is no principled value
    to fall back on.
    """

    triplets_per_epoch: int
    batch_size: int
    epochs: int = 100
    learning_rate: float = 0.01
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 40
    alpha: float | None = None
    lam: float = 100.0
    seed: int = 0
    quantization_sum: str = "referenced"
    checkpoint_every: int = 0

    def __post_init__(self):
        for name in ("triplets_per_epoch", "batch_size", "epochs", "lr_decay_every"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be >= 1")
        if not self.learning_rate >= 0:
            raise InvalidInputError("learning_rate must be >= 0")
        if not 0 < self.lr_decay_factor <= 1:
            raise InvalidInputError("lr_decay_factor must be in (0, 1]")
        if self.alpha is not None and not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise InvalidInputError("alpha must be finite and >= 0")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise InvalidInputError("lam must be finite and >= 0")
        if self.quantization_sum not in QUANTIZATION_MODES:
            raise InvalidInputError(f"quantization_sum must be one of {QUANTIZATION_MODES}")
        if self.checkpoint_every < 0:
            raise InvalidInputError("checkpoint_every must be >= 0")

    def loss_config(self, code_length: int) -> LossConfig:
        alpha = code_length / 2 if self.alpha is None else self.alpha
        return LossConfig(alpha, self.lam, self.quantization_sum)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch index."""
        return self.learning_rate * self.lr_decay_factor ** (epoch // self.lr_decay_every)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    nll_mean: float
    qerr_mean: float
    lr: float
    seconds: float
    grad_scale_mean: float


@dataclass
class TrainReport:
    records: list = field(default_factory=list)

    def nll(self) -> np.ndarray:
        return np.array([r.nll_mean for r in self.records])

    def write_csv(self, path, timings: bool = True) -> None:
        """Write one row per epoch. ``timings=False`` zeroes the wall-time column."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in self.records:
                secs = r.seconds if timings else 0.0
                w.writerow([r.epoch, repr(r.nll_mean), repr(r.qerr_mean), repr(r.lr), f"{secs:.6f}"])

    @classmethod
    def read_csv(cls, path) -> "TrainReport":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(rows[0]) != REPORT_COLUMNS:
            raise DataError(f"{path}: not a training report")
        records = [
            EpochRecord(int(e), float(n), float(q), float(lr), float(s), float("nan"))
            for e, n, q, lr, s in rows[1:]
        ]
        return cls(records)


def _check_inputs(features, store: LabelStore, params: enc.EncoderParams) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError("features must be an (N, D) matrix")
    if X.shape[1] != params.input_dim:
        raise DimensionError(f"encoder expects D={params.input_dim}, features have D={X.shape[1]}")
    if X.shape[0] != len(store):
        raise DimensionError(f"{X.shape[0]} feature rows but {len(store)} label entries")
    if not np.all(np.isfinite(X)):
        raise DataError("features contain non-finite values")
    return X


def batch_gradient(params, X, triplets, cfg: LossConfig):
    """Loss terms and encoder gradient for one batch, averaged over its triplets.

    Only the images referenced by ``triplets`` are encoded, unless
    ``cfg.quantization_sum == "full"``, in which case every row of ``X``
    enters the quantization term.

    Returns:
        ``(nll, qerr, n_quantized, grad_scale_sum, grads)``.
    """
    t = as_triplets(triplets, X.shape[0])
    if cfg.quantization_sum == "full":
        rows, local = np.arange(X.shape[0]), t
    else:
        rows, inv = np.unique(t, return_inverse=True)
        local = inv.reshape(-1, 3)
    Xb = X[rows]
    U = enc.forward(params, Xb)
    nll, qerr, G, scale = loss_and_grad(local, U, cfg)
    grads = enc.backward(params, Xb, G / len(t))
    return nll, qerr, len(rows), float(scale.sum()), grads


def train(features, store: LabelStore, cfg: TrainConfig, init_params: enc.EncoderParams,
          checkpoint_dir=None) -> tuple[enc.EncoderParams, TrainReport]:
    """Fit encoder parameters by minibatch SGD.

    Each epoch draws a fresh set of triplets with seed ``cfg.seed + epoch``
    and walks it in batches of ``cfg.batch_size`` triplets. Runs are fully
    deterministic given the inputs.

    Raises:
        InfeasibleSamplingError: the labels admit no triplet.
        DivergenceError: the loss became non-finite.
    """
    X = _check_inputs(features, store, init_params)
    loss_cfg = cfg.loss_config(init_params.code_length)
    params = init_params
    report = TrainReport()
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        lr = cfg.lr_at(epoch)
        triplets = sample_triplets(store, cfg.triplets_per_epoch, cfg.seed + epoch)
        nll_sum = qerr_sum = scale_sum = 0.0
        n_quantized = 0
        for step, lo in enumerate(range(0, len(triplets), cfg.batch_size)):
            batch = triplets[lo:lo + cfg.batch_size]
            # overflow is caught by the finiteness checks below
            with np.errstate(over="ignore", invalid="ignore"):
                nll, qerr, nq, scale, grads = batch_gradient(params, X, batch, loss_cfg)
            if not (np.isfinite(nll) and np.isfinite(qerr)):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, step {step}", epoch=epoch, step=step
                )
            nll_sum += nll
            qerr_sum += qerr
            scale_sum += scale
            n_quantized += nq
            try:
                params = enc.sgd_step(params, grads, lr)
            except InvalidInputError:
                raise DivergenceError(
                    f"parameters became non-finite at epoch {epoch}, step {step}",
                    epoch=epoch, step=step,
                ) from None
        record = EpochRecord(
            epoch=epoch + 1,
            nll_mean=nll_sum / len(triplets),
            qerr_mean=qerr_sum / n_quantized,
            lr=lr,
            seconds=time.perf_counter() - start,
            grad_scale_mean=scale_sum / len(triplets),
        )
        report.records.append(record)
        log.debug("epoch %d nll=%.5f qerr=%.5f lr=%g", record.epoch, record.nll_mean,
                  record.qerr_mean, lr)
        if checkpoint_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            enc.save(params, Path(checkpoint_dir) / f"epoch{epoch + 1:04d}.enc")
    return params, report


def loss_probe(features, triplets, params: enc.EncoderParams, cfg) -> tuple[float, float]:
    """Evaluate ``(nll, qerr)`` at ``params`` without updating anything.

    ``cfg`` may be a :class:`TrainConfig` or a :class:`~tlhash.loss.LossConfig`.
    Both values are sums, so ``nll + lam * qerr`` is the total loss.
    """
    if isinstance(cfg, TrainConfig):
        cfg = cfg.loss_config(params.code_length)
    U = enc.forward(params, np.asarray(features, dtype=np.float64))
    return loss_terms(triplets, U, cfg)


def with_overrides(cfg: TrainConfig, **changes) -> TrainConfig:
    return replace(cfg, **changes)
