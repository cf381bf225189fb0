"""Prototype classifier standing in for CLIP prompt tuning.

Frozen unit-norm class anchors play the role of the prompted text embeddings;
a learnable shift (shared across classes, or one per class) plays the prompt.
Logits are ``scale * <x, normalize(anchor_c + shift_c)>``.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .numerics import InvalidInputError

SHARED = "shared"
PER_CLASS = "perclass"
MODES = (SHARED, PER_CLASS)

CKPT_MAGIC = b"DSPTCKP1"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<8sIIIIf")

# below this the direction of anchor + shift is undefined
DEGENERATE_NORM = 1e-8
UNIT_TOL = 1e-6


class DegenerateDirectionError(ArithmeticError):
    pass


@dataclass
class PrototypeModel:
    anchors: np.ndarray
    scale: float = 30.0
    mode: str = SHARED
    shift: np.ndarray = field(default=None)

    def __post_init__(self):
        A = np.array(self.anchors, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] < 2:
            raise InvalidInputError("anchors must be a (C, d) array with C >= 2")
        if np.abs(np.linalg.norm(A, axis=1) - 1.0).max() > UNIT_TOL:
            raise InvalidInputError("anchors must have unit norm")
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}")
        if not self.scale > 0:
            raise InvalidInputError("scale must be positive")
        A.setflags(write=False)
        self.anchors = A
        shape = self.shift_shape
        if self.shift is None:
            self.shift = np.zeros(shape)
        else:
            self.shift = np.array(self.shift, dtype=np.float64)
            if self.shift.shape != shape:
                raise InvalidInputError(f"shift must have shape {shape}")

    @property
    def C(self) -> int:
        return self.anchors.shape[0]

    @property
    def d(self) -> int:
        return self.anchors.shape[1]

    @property
    def shift_shape(self):
        return (self.d,) if self.mode == SHARED else (self.C, self.d)

    def copy(self) -> "PrototypeModel":
        return PrototypeModel(self.anchors, self.scale, self.mode, self.shift.copy())

    def directions(self):
        """Unit class directions and the norms they were divided by."""
        V = self.anchors + self.shift
        norms = np.linalg.norm(V, axis=1)
        if norms.min() < DEGENERATE_NORM:
            raise DegenerateDirectionError("anchor + shift collapsed to zero")
        return V / norms[:, None], norms


def _check_features(X, d):
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != d:
        raise InvalidInputError(f"feature dimension {X.shape[1]} != model dimension {d}")
    if X.shape[0] and np.abs(np.linalg.norm(X, axis=1) - 1.0).max() > UNIT_TOL:
        raise InvalidInputError("features must have unit norm")
    return X, single


def forward(model: PrototypeModel, X) -> np.ndarray:
    """Logits for one feature vector (C,) or a batch (n, C)."""
    X, single = _check_features(X, model.d)
    W, _ = model.directions()
    Z = model.scale * X @ W.T
    return Z[0] if single else Z


def backward(model: PrototypeModel, X, upstream) -> np.ndarray:
    """Gradient of ``sum(upstream * forward(X))`` with respect to the shift.

    Anchors are frozen and receive nothing. In per-class mode row c of the
    result depends only on ``upstream[..., c]``.
    """
    X, single = _check_features(X, model.d)
    G = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    if G.shape != (X.shape[0], model.C):
        raise InvalidInputError("upstream must match the logit shape")
    W, norms = model.directions()
    R = G.T @ X  # (C, d): sum_n G[n, c] x_n
    radial = np.einsum("cd,cd->c", R, W)
    per_class = model.scale * (R - radial[:, None] * W) / norms[:, None]
    return per_class.sum(axis=0) if model.mode == SHARED else per_class


def zero_shot_predict(model: PrototypeModel, X) -> np.ndarray | int:
    """Argmax over cosine similarity to the bare anchors; ties go to the lowest index."""
    X, single = _check_features(X, model.d)
    pred = np.argmax(X @ model.anchors.T, axis=1)
    return int(pred[0]) if single else pred


def predict(model: PrototypeModel, X) -> np.ndarray:
    return np.argmax(forward(model, np.atleast_2d(X)), axis=1)


def save_checkpoint(model: PrototypeModel, path) -> None:
    header = _CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, model.C, model.d,
                               MODES.index(model.mode), model.scale)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(model.anchors.astype("<f4").tobytes())
        fh.write(np.asarray(model.shift).astype("<f4").tobytes())


def load_checkpoint(path) -> PrototypeModel:
    raw = open(path, "rb").read()
    if len(raw) < _CKPT_HEADER.size:
        raise InvalidInputError("checkpoint truncated in header")
    magic, version, C, d, mode, scale = _CKPT_HEADER.unpack_from(raw)
    if magic != CKPT_MAGIC or version != CKPT_VERSION:
        raise InvalidInputError("not a version-1 checkpoint")
    if mode >= len(MODES):
        raise InvalidInputError(f"unknown model mode {mode}")
    n_shift = d if MODES[mode] == SHARED else C * d
    body = np.frombuffer(raw, dtype="<f4", offset=_CKPT_HEADER.size)
    if body.size != C * d + n_shift:
        raise InvalidInputError("checkpoint size does not match its header")
    anchors = body[: C * d].astype(np.float64).reshape(C, d)
    # float32 storage: restore exact unit norm
    anchors /= np.linalg.norm(anchors, axis=1, keepdims=True)
    shift = body[C * d:].astype(np.float64)
    if MODES[mode] == PER_CLASS:
        shift = shift.reshape(C, d)
    return PrototypeModel(anchors, float(scale), MODES[mode], shift)
