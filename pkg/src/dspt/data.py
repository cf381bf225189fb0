"""Synthetic strong-prior datasets and the DSPT-EMB embedding format."""

import csv
import struct
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .noise import TransitionMatrix, corrupt
from .numerics import InvalidInputError

EMB_MAGIC = b"DSPTEMB1"
_EMB_HEADER = struct.Struct("<8sIII")
UNIT_TOL = 1e-6
RENORM_TOL = 1e-3


class FormatError(InvalidInputError):
    """Malformed embedding file. ``code`` distinguishes the failure."""

    code = "format"

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BadMagicError(FormatError):
    code = "bad-magic"


class TruncatedError(FormatError):
    code = "truncated"


class DimensionMismatchError(FormatError):
    code = "dimension-mismatch"


class LabelRangeError(FormatError):
    code = "label-range"


class NonFiniteError(FormatError):
    code = "non-finite"


class NotUnitNormError(FormatError):
    code = "not-unit-norm"


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    clean: np.ndarray
    noisy: np.ndarray
    mask: np.ndarray
    C: int
    split: str = "train"

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise InvalidInputError("features must be (n, d)")
        n = X.shape[0]
        clean = np.asarray(self.clean, dtype=np.int64)
        noisy = np.asarray(self.noisy, dtype=np.int64)
        mask = np.asarray(self.mask, dtype=bool)
        if clean.shape != (n,) or noisy.shape != (n,) or mask.shape != (n,):
            raise InvalidInputError("labels and mask need one entry per row")
        if n and (min(clean.min(), noisy.min()) < 0 or max(clean.max(), noisy.max()) >= self.C):
            raise InvalidInputError("label out of range")
        if not np.array_equal(mask, clean != noisy):
            raise InvalidInputError("mask must mark exactly the flipped labels")
        if n and np.abs(np.linalg.norm(X, axis=1) - 1.0).max() > UNIT_TOL:
            raise InvalidInputError("feature rows must have unit norm")
        for a in (X, clean, noisy, mask):
            a.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "clean", clean)
        object.__setattr__(self, "noisy", noisy)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def clean_set(cls, features, labels, C, split="train") -> "Dataset":
        labels = np.asarray(labels, dtype=np.int64)
        return cls(features, labels, labels, np.zeros(labels.shape, bool), C, split)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def with_noise(self, T: TransitionMatrix, seed: int):
        """Corrupt the clean labels; returns ``(dataset, report)``. Train split only."""
        if self.split != "train":
            raise InvalidInputError("label noise is only applied to the train split")
        if T.C != self.C:
            raise InvalidInputError("transition matrix does not match the class count")
        noisy, mask, report = corrupt(self.clean, T, seed)
        return replace(self, noisy=noisy, mask=mask), report


def _unit_rows(X):
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def _f32_unit_rows(X):
    # rows stored exactly as float32 values so files round-trip bit-for-bit
    return _unit_rows(X).astype(np.float32).astype(np.float64)


def gen_synthetic(C: int, d: int, n_train: int, n_test: int, kappa: float,
                  anchor_perturb: float, seed: int):
    """Class means on the unit sphere, samples scattered around them.

    A sample of class y is ``normalize(mean_y + g / sqrt(kappa))`` with g
    standard normal; anchors are ``normalize(mean_c + anchor_perturb * g')``
    with g' ~ N(0, I/d) (unit expected norm), so zero-shot accuracy falls as
    ``anchor_perturb`` grows.
    Returns ``(train, test, anchors)``.
    """
    if C < 2 or d < 1 or n_train < 0 or n_test < 0:
        raise InvalidInputError("need C >= 2, d >= 1 and non-negative sizes")
    if not kappa > 0 or not anchor_perturb >= 0:
        raise InvalidInputError("kappa must be positive and anchor_perturb non-negative")
    if d < C:
        warnings.warn(f"d={d} < C={C}: class means cannot be near-orthogonal", stacklevel=2)
    rng = np.random.default_rng(seed)
    means = _unit_rows(rng.standard_normal((C, d)))
    anchors = _f32_unit_rows(means + anchor_perturb * rng.standard_normal((C, d)) / np.sqrt(d))

    def draw(n, split):
        labels = rng.permutation(np.arange(n) % C)
        X = means[labels] + rng.standard_normal((n, d)) / np.sqrt(kappa)
        return Dataset.clean_set(_f32_unit_rows(X), labels, C, split)

    train = draw(n_train, "train")
    test = draw(n_test, "test")
    return train, test, anchors


def save_embeddings(dataset: Dataset, path) -> None:
    """Write DSPT-EMB v1: header, float32 features, uint32 clean labels."""
    with open(path, "wb") as fh:
        fh.write(_EMB_HEADER.pack(EMB_MAGIC, dataset.n, dataset.d, dataset.C))
        fh.write(dataset.features.astype("<f4").tobytes())
        fh.write(dataset.clean.astype("<u4").tobytes())


def _parse_rows(X, labels, C, split):
    if X.shape[0] and not np.all(np.isfinite(X)):
        row = int(np.argwhere(~np.isfinite(X))[0, 0])
        raise NonFiniteError(f"non-finite feature in row {row}")
    if labels.size and labels.max() >= C:
        row = int(np.argmax(labels >= C))
        raise LabelRangeError(f"label {labels[row]} >= C={C} in row {row}")
    norms = np.linalg.norm(X, axis=1)
    if X.shape[0] and np.abs(norms - 1.0).max() > RENORM_TOL:
        row = int(np.argmax(np.abs(norms - 1.0)))
        raise NotUnitNormError(f"row {row} has norm {norms[row]:.6f}, not within {RENORM_TOL} of 1")
    off = np.abs(norms - 1.0) > UNIT_TOL
    if off.any():
        X = X.copy()
        X[off] /= norms[off, None]
    return Dataset.clean_set(X, labels.astype(np.int64), C, split)


def load_embeddings(path, split: str = "train") -> Dataset:
    raw = open(path, "rb").read()
    if len(raw) < 8 or raw[:8] != EMB_MAGIC:
        raise BadMagicError("missing DSPTEMB1 magic", 0)
    if len(raw) < _EMB_HEADER.size:
        raise TruncatedError("header truncated", len(raw))
    _, n, d, C = _EMB_HEADER.unpack_from(raw)
    if C < 2 or (n and d == 0):
        raise DimensionMismatchError(f"invalid dimensions n={n} d={d} C={C}", 8)
    feat_end = _EMB_HEADER.size + 4 * n * d
    end = feat_end + 4 * n
    if len(raw) < end:
        raise TruncatedError(f"expected {end} bytes, file has {len(raw)}", len(raw))
    if len(raw) > end:
        raise DimensionMismatchError(f"{len(raw) - end} trailing bytes beyond n={n}, d={d}", end)
    X = np.frombuffer(raw, "<f4", n * d, _EMB_HEADER.size).astype(np.float64).reshape(n, d)
    labels = np.frombuffer(raw, "<u4", n, feat_end)
    return _parse_rows(X, labels, C, split)


def load_csv(path, C: int | None = None, split: str = "train") -> Dataset:
    """CSV with header ``label,f0,...,f{d-1}``; floats parsed with ``float()``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["label"]:
        raise BadMagicError("CSV header must start with 'label'", 0)
    d = len(rows[0]) - 1
    if rows[0][1:] != [f"f{i}" for i in range(d)]:
        raise DimensionMismatchError("CSV feature columns must be f0..f{d-1}")
    body = rows[1:]
    for i, r in enumerate(body):
        if len(r) != d + 1:
            raise DimensionMismatchError(f"row {i} has {len(r) - 1} features, expected {d}")
    labels = np.array([int(r[0]) for r in body], dtype=np.int64)
    if labels.size and labels.min() < 0:
        raise LabelRangeError("negative label")
    X = np.array([[float(v) for v in r[1:]] for r in body], dtype=np.float64).reshape(len(body), d)
    if C is None:
        C = int(labels.max()) + 1 if labels.size else 2
    return _parse_rows(X, labels, max(C, 2), split)


def batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Shuffled index batches for one epoch; each index appears exactly once."""
    if batch_size < 1:
        raise InvalidInputError("batch_size must be >= 1")
    order = np.random.default_rng([seed, epoch]).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


@dataclass(frozen=True)
class Benchmark:
    """Pinned synthetic benchmark used by the phenomenon checks."""

    C: int = 20
    d: int = 64
    n_train: int = 5000
    n_test: int = 2000
    kappa: float = 20.0
    anchor_perturb: float = 1.0
    scale: float = 30.0
    mode: str = "perclass"
    noise: str = "sym:0.6"
    seed: int = 1
    train_seed: int = 3

    def generate(self):
        return gen_synthetic(self.C, self.d, self.n_train, self.n_test,
                             self.kappa, self.anchor_perturb, self.seed)


BENCHMARK = Benchmark()
