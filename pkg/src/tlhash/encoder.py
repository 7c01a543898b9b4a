"""Feature-to-code encoders with hand-written backpropagation.

Two architectures are supported:

* ``linear``: ``u = W x + c``
* ``mlp1``:   ``u = W2 tanh(W1 x + c1) + c2``

Parameters live in an immutable :class:`EncoderParams`; training produces new
instances rather than mutating. Every function accepts a single feature vector
``(D,)`` or a batch ``(n, D)`` and returns outputs of matching rank.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codes import BitCode, sign_quantize_rows
from .errors import DataError, DimensionError, InvalidInputError

ARCHITECTURES = ("linear", "mlp1")
INIT_STD = 0.01
CHECKPOINT_MAGIC = b"ENC1"
_ARCH_TAGS = {"linear": 0, "mlp1": 1}


@dataclass(frozen=True, eq=False)
class EncoderParams:
    """Encoder weights.

    ``layers`` is a tuple of ``(W, c)`` pairs, input side first. ``W`` has
    shape ``(out, in)``. ``hidden_dim`` is 0 for the linear architecture.
    """

    architecture: str
    input_dim: int
    hidden_dim: int
    code_length: int
    layers: tuple

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise InvalidInputError(f"unknown architecture {self.architecture!r}")
        dims = _layer_dims(self.architecture, self.input_dim, self.hidden_dim, self.code_length)
        if len(self.layers) != len(dims):
            raise DimensionError(f"{self.architecture} needs {len(dims)} layers")
        frozen = []
        for (W, c), (n_out, n_in) in zip(self.layers, dims):
            W = np.array(W, dtype=np.float64)
            c = np.array(c, dtype=np.float64)
            if W.shape != (n_out, n_in) or c.shape != (n_out,):
                raise DimensionError(
                    f"layer shapes {W.shape}/{c.shape} do not match ({n_out}, {n_in})"
                )
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(c))):
                raise InvalidInputError("encoder parameters must be finite")
            W.setflags(write=False)
            c.setflags(write=False)
            frozen.append((W, c))
        object.__setattr__(self, "layers", tuple(frozen))

    def __eq__(self, other):
        if not isinstance(other, EncoderParams):
            return NotImplemented
        return self._header() == other._header() and all(
            np.array_equal(a, b)
            for (W1, c1), (W2, c2) in zip(self.layers, other.layers)
            for a, b in ((W1, W2), (c1, c2))
        )

    __hash__ = None

    def _header(self):
        return (self.architecture, self.input_dim, self.hidden_dim, self.code_length)

    def with_layers(self, layers) -> "EncoderParams":
        return EncoderParams(*self._header(), tuple(layers))


def _layer_dims(architecture, D, H, L):
    if architecture == "linear":
        return [(L, D)]
    return [(H, D), (L, H)]


def init(architecture: str, input_dim: int, code_length: int, hidden_dim: int = 0,
         seed: int = 0) -> EncoderParams:
    """Draw weights i.i.d. from N(0, 0.01^2); biases start at zero."""
    if architecture not in ARCHITECTURES:
        raise InvalidInputError(f"unknown architecture {architecture!r}")
    if input_dim < 1 or code_length < 1:
        raise DimensionError("input_dim and code_length must be >= 1")
    if architecture == "mlp1" and hidden_dim < 1:
        raise DimensionError("mlp1 needs hidden_dim >= 1")
    if architecture == "linear":
        hidden_dim = 0
    rng = np.random.default_rng(seed)
    layers = [
        (rng.normal(0.0, INIT_STD, size=shape), np.zeros(shape[0]))
        for shape in _layer_dims(architecture, input_dim, hidden_dim, code_length)
    ]
    return EncoderParams(architecture, input_dim, hidden_dim, code_length, tuple(layers))


def _as_batch(params: EncoderParams, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise DimensionError(f"expected features of length {params.input_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("features must be finite")
    return X, single


def _forward_batch(params, X):
    """Returns the code matrix and the hidden activations (``None`` for linear)."""
    if params.architecture == "linear":
        (W, c), = params.layers
        return X @ W.T + c, None
    (W1, c1), (W2, c2) = params.layers
    H = np.tanh(X @ W1.T + c1)
    return H @ W2.T + c2, H


def forward(params: EncoderParams, x) -> np.ndarray:
    X, single = _as_batch(params, x)
    U, _ = _forward_batch(params, X)
    return U[0] if single else U


def backward(params: EncoderParams, x, grad_u) -> tuple:
    """Chain-rule parameter gradients given the upstream gradient on ``u``.

    Batched inputs have their per-row gradients summed.

    Returns:
        Tuple of ``(dW, dc)`` pairs aligned with ``params.layers``.
    """
    X, single = _as_batch(params, x)
    G = np.asarray(grad_u, dtype=np.float64)
    G = G[None, :] if single else G
    if G.shape != (X.shape[0], params.code_length):
        raise DimensionError(f"grad_u shape {np.shape(grad_u)} does not match outputs")
    if params.architecture == "linear":
        return ((G.T @ X, G.sum(axis=0)),)
    (W1, c1), (W2, c2) = params.layers
    H = np.tanh(X @ W1.T + c1)
    dpre = (G @ W2) * (1.0 - H * H)
    return ((dpre.T @ X, dpre.sum(axis=0)), (G.T @ H, G.sum(axis=0)))


def sgd_step(params: EncoderParams, grads, lr: float) -> EncoderParams:
    """Return ``params - lr * grads`` as a new parameter set."""
    if lr == 0:
        return params
    layers = [(W - lr * dW, c - lr * dc) for (W, c), (dW, dc) in zip(params.layers, grads)]
    return params.with_layers(layers)


def encode_rows(params: EncoderParams, X) -> np.ndarray:
    """Packed ``(n, W)`` codes for a feature matrix."""
    X, _ = _as_batch(params, X)
    U, _ = _forward_batch(params, X)
    return sign_quantize_rows(U)


def encode(params: EncoderParams, x) -> BitCode:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("encode takes one feature vector; use encode_rows for batches")
    return BitCode(params.code_length, encode_rows(params, x[None, :])[0])


# ---------------------------------------------------------------------------
# ENC1 checkpoints
# ---------------------------------------------------------------------------


def save(params: EncoderParams, path) -> None:
    """Write ``params`` in ENC1 format.

    Layout: ``b"ENC1"``, u8 architecture tag (0 linear, 1 mlp1), u32 D, u32 H,
    u32 L, then per layer the row-major weights followed by the bias, all as
    little-endian float64.
    """
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<BIII", _ARCH_TAGS[params.architecture], params.input_dim,
                    params.hidden_dim, params.code_length),
    ]
    for W, c in params.layers:
        parts.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(c, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load(path) -> EncoderParams:
    data = Path(path).read_bytes()
    if len(data) < 17 or data[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not an ENC1 checkpoint")
    tag, D, H, L = struct.unpack_from("<BIII", data, 4)
    arch = {v: k for k, v in _ARCH_TAGS.items()}.get(tag)
    if arch is None:
        raise DataError(f"{path}: unknown architecture tag {tag}")
    dims = _layer_dims(arch, D, H, L)
    expected = 17 + 8 * sum(o * i + o for o, i in dims)
    if len(data) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(data)}")
    offset = 17
    layers = []
    for n_out, n_in in dims:
        W = np.frombuffer(data, dtype="<f8", count=n_out * n_in, offset=offset).reshape(n_out, n_in)
        offset += 8 * n_out * n_in
        c = np.frombuffer(data, dtype="<f8", count=n_out, offset=offset)
        offset += 8 * n_out
        layers.append((W, c))
    return EncoderParams(arch, D, H, L, tuple(layers))
