"""Triplet-label likelihood loss on relaxed codes.

For a triplet ``(q, p, n)`` with relaxed codes ``u`` let

    theta_ij = 0.5 * <u_i, u_j>
    x        = theta_qp - theta_qn - alpha

The triplet holds with probability ``sigmoid(x)``. The training objective is

    sum_m softplus(-x_m) + lam * sum_n ||sgn(u_n) - u_n||^2

where the quantization sum runs over the images referenced by the triplets
(``quantization_sum="referenced"``) or over every row of ``U``
(``quantization_sum="full"``).

Triplets are passed as an ``(M, 3)`` integer array of row indices into
``U``; relaxed codes as an ``(N, L)`` float array.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .codes import sgn
from .errors import DimensionError, InvalidInputError

QUANTIZATION_MODES = ("referenced", "full")


class Triplet(NamedTuple):
    q: int
    p: int
    n: int


@dataclass(frozen=True)
class LossConfig:
    alpha: float
    lam: float = 100.0
    quantization_sum: str = "referenced"

    def __post_init__(self):
        for name in ("alpha", "lam"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise InvalidInputError(f"{name} must be finite and >= 0, got {value}")
        if self.quantization_sum not in QUANTIZATION_MODES:
            raise InvalidInputError(f"quantization_sum must be one of {QUANTIZATION_MODES}")

    @classmethod
    def for_code_length(cls, length: int, **overrides) -> "LossConfig":
        """Defaults: margin of half the code length, ``lam = 100``."""
        overrides.setdefault("alpha", length / 2)
        return cls(**overrides)


# ---------------------------------------------------------------------------
# Stable scalar functions
# ---------------------------------------------------------------------------


def softplus(x):
    """``log(1 + exp(x))`` without overflow for large ``|x|``."""
    x = np.asarray(x, dtype=np.float64)
    # exp(-|x|) underflowing to 0 is the correct limit
    with np.errstate(under="ignore"):
        out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return out if out.ndim else float(out)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # exp of a non-positive argument only; underflow to 0 is the correct limit
    with np.errstate(under="ignore"):
        e = np.exp(-np.abs(x))
        out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


def log_sigmoid(x):
    # 0.0 - ... keeps the large-x limit at +0.0 rather than -0.0
    return 0.0 - softplus(-np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# Validation helpers
# ---------------------------------------------------------------------------


def _as_codes(U) -> np.ndarray:
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 2:
        raise DimensionError("relaxed codes must be an (N, L) array")
    if not np.all(np.isfinite(U)):
        raise InvalidInputError("relaxed codes must be finite")
    return U


def as_triplets(triplets, n_images: int | None = None) -> np.ndarray:
    """Coerce a sequence of ``(q, p, n)`` into an ``(M, 3)`` int64 array."""
    arr = np.asarray(triplets, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DimensionError("triplets must have shape (M, 3)")
    if n_images is not None and (arr.min() < 0 or arr.max() >= n_images):
        raise IndexError(f"triplet index out of range for {n_images} images")
    return arr


# ---------------------------------------------------------------------------
# Loss pieces
# ---------------------------------------------------------------------------


def theta_relaxed(u_i, u_j) -> float:
    u_i = np.asarray(u_i, dtype=np.float64)
    u_j = np.asarray(u_j, dtype=np.float64)
    if u_i.shape != u_j.shape or u_i.ndim != 1:
        raise DimensionError(f"code shapes differ: {u_i.shape} vs {u_j.shape}")
    return 0.5 * float(u_i @ u_j)


def triplet_log_prob(u_q, u_p, u_n, alpha: float) -> float:
    """Log-probability that a triplet holds, ``log sigmoid(theta_qp - theta_qn - alpha)``."""
    codes = _as_codes(np.stack([np.asarray(u_q), np.asarray(u_p), np.asarray(u_n)]))
    if not np.isfinite(alpha):
        raise InvalidInputError("alpha must be finite")
    u_q, u_p, u_n = codes
    return float(log_sigmoid(theta_relaxed(u_q, u_p) - theta_relaxed(u_q, u_n) - alpha))


def margins(triplets, U, alpha: float) -> np.ndarray:
    """Per-triplet sigmoid argument ``theta_qp - theta_qn - alpha``."""
    U = _as_codes(U)
    t = as_triplets(triplets, U.shape[0])
    uq, up, un = U[t[:, 0]], U[t[:, 1]], U[t[:, 2]]
    return 0.5 * (np.einsum("ij,ij->i", uq, up) - np.einsum("ij,ij->i", uq, un)) - alpha


def quantized_rows(triplets, n_images: int, mode: str) -> np.ndarray:
    """Row indices that contribute to the quantization sum."""
    if mode == "full":
        return np.arange(n_images)
    return np.unique(as_triplets(triplets, n_images))


def quantization_error(U, rows=None) -> float:
    """``sum ||sgn(u) - u||^2`` over ``rows`` (all rows when ``None``)."""
    U = _as_codes(U)
    if rows is not None:
        U = U[rows]
    return float(np.sum((sgn(U) - U) ** 2))


def loss_terms(triplets, U, cfg: LossConfig) -> tuple[float, float]:
    """Return ``(nll, qerr)`` such that ``total_loss = nll + cfg.lam * qerr``."""
    U = _as_codes(U)
    t = as_triplets(triplets, U.shape[0])
    nll = float(np.sum(softplus(-margins(t, U, cfg.alpha)))) if len(t) else 0.0
    qerr = quantization_error(U, quantized_rows(t, U.shape[0], cfg.quantization_sum))
    return nll, qerr


def total_loss(triplets, U, cfg: LossConfig) -> float:
    nll, qerr = loss_terms(triplets, U, cfg)
    return nll + cfg.lam * qerr


def loss_and_grad(triplets, U, cfg: LossConfig):
    """Loss terms, gradient and per-triplet gradient scale in one pass.

    The binary targets ``sgn(u_n)`` are held constant. Per-triplet terms are
    scattered with ``np.bincount``, which accumulates in a fixed order, so
    results are bit-reproducible.

    Returns:
        ``(nll, qerr, grad, scale)`` where ``grad`` is ``(N, L)`` and
        ``scale`` holds ``1 - sigmoid(x)`` per triplet. Rows of images
        referenced by no triplet have zero gradient unless
        ``quantization_sum="full"``.
    """
    U = _as_codes(U)
    t = as_triplets(triplets, U.shape[0])
    grad = np.zeros_like(U)
    nll, scale = 0.0, np.zeros(0)
    if len(t):
        q, p, n = t[:, 0], t[:, 1], t[:, 2]
        uq, up, un = U[q], U[p], U[n]
        x = 0.5 * (np.einsum("ij,ij->i", uq, up) - np.einsum("ij,ij->i", uq, un)) - cfg.alpha
        nll = float(np.sum(softplus(-x)))
        # 1 - sigmoid(x) == sigmoid(-x)
        scale = sigmoid(-x)
        half = 0.5 * scale[:, None]
        rows = np.concatenate([q, p, n])
        terms = np.concatenate([-half * (up - un), -half * uq, half * uq])
        for k in range(U.shape[1]):
            grad[:, k] = np.bincount(rows, weights=terms[:, k], minlength=U.shape[0])
    qrows = quantized_rows(t, U.shape[0], cfg.quantization_sum)
    Uq = U[qrows]
    resid = Uq - sgn(Uq)
    qerr = float(np.sum(resid ** 2))
    if cfg.lam:
        grad[qrows] += 2.0 * cfg.lam * resid
    return nll, qerr, grad, scale


def grad_U(triplets, U, cfg: LossConfig) -> np.ndarray:
    """Gradient of :func:`total_loss` with respect to every relaxed code."""
    return loss_and_grad(triplets, U, cfg)[2]


def gradient_scale(triplets, U, alpha: float) -> np.ndarray:
    """Per-triplet factor ``1 - sigmoid(x)`` that multiplies every likelihood gradient."""
    return sigmoid(-margins(triplets, U, alpha))
