"""Instance-independent label noise from a transition matrix."""

from dataclasses import dataclass, field

import numpy as np

from .numerics import InvalidInputError
from .rng import uniforms

# stream id that keeps corruption draws apart from other uses of the seed
NOISE_STREAM = 1


@dataclass(frozen=True)
class TransitionMatrix:
    """Column-stochastic matrix with ``T[j, k] = Pr(noisy=j | clean=k)``."""

    entries: np.ndarray
    kind: str
    eta: float
    mapping: tuple[int, ...] | None = None

    def __post_init__(self):
        T = np.asarray(self.entries, dtype=np.float64)
        if T.ndim != 2 or T.shape[0] != T.shape[1] or T.shape[0] < 2:
            raise InvalidInputError("transition matrix must be C x C with C >= 2")
        if np.any(T < 0) or not np.all(np.isfinite(T)):
            raise InvalidInputError("transition entries must be finite and non-negative")
        if np.abs(T.sum(axis=0) - 1.0).max() > 1e-12:
            raise InvalidInputError("columns must sum to one")
        T.setflags(write=False)
        object.__setattr__(self, "entries", T)

    @property
    def C(self) -> int:
        return self.entries.shape[0]

    @property
    def symmetric_bound_applies(self) -> bool:
        """Symmetric noise with eta < 1 - 1/C (clean-risk bound precondition)."""
        return self.kind == "symmetric" and self.eta < 1.0 - 1.0 / self.C

    @property
    def diagonally_dominant(self) -> bool:
        """T[j, k] <= T[k, k] for all j != k (noisy-risk bound precondition)."""
        T = self.entries
        return bool(np.all(T <= np.diag(T)[None, :] + 1e-15))

    def describe(self) -> dict:
        return {"kind": self.kind, "eta": self.eta, "C": self.C,
                "mapping": list(self.mapping) if self.mapping is not None else None}


def _check_eta(eta):
    if not 0.0 <= eta <= 1.0:
        raise InvalidInputError(f"noise rate {eta} outside [0, 1]")


def symmetric_matrix(C: int, eta: float) -> TransitionMatrix:
    if C < 2:
        raise InvalidInputError("need at least two classes")
    _check_eta(eta)
    T = np.full((C, C), eta / (C - 1))
    np.fill_diagonal(T, 1.0 - eta)
    return TransitionMatrix(T, "symmetric", float(eta))


def cycle_mapping(C: int) -> tuple[int, ...]:
    return tuple((k + 1) % C for k in range(C))


def pairflip_matrix(C: int, eta: float, mapping=None) -> TransitionMatrix:
    """Class k keeps its label w.p. 1-eta and flips to ``mapping[k]`` otherwise."""
    if C < 2:
        raise InvalidInputError("need at least two classes")
    _check_eta(eta)
    mapping = cycle_mapping(C) if mapping is None else tuple(int(m) for m in mapping)
    if sorted(mapping) != list(range(C)):
        raise InvalidInputError("mapping must be a permutation of the classes")
    if any(m == k for k, m in enumerate(mapping)):
        raise InvalidInputError("mapping must not have fixed points")
    T = np.zeros((C, C))
    for k, m in enumerate(mapping):
        T[k, k] = 1.0 - eta
        T[m, k] = eta
    return TransitionMatrix(T, "pairflip", float(eta), mapping)


@dataclass
class NoiseReport:
    requested_rate: float
    empirical_rate: float
    flip_counts: list[int] = field(default_factory=list)
    n: int = 0

    def to_dict(self) -> dict:
        return {"requested_rate": self.requested_rate, "empirical_rate": self.empirical_rate,
                "flip_counts": list(self.flip_counts), "n": self.n}


def expected_flip_rate(T: TransitionMatrix, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    return float(np.mean(1.0 - np.diag(T.entries)[labels]))


def corrupt(labels, T: TransitionMatrix, seed: int):
    """Sample a noisy label for every clean label from its column of ``T``.

    Returns ``(noisy, mask, report)``. Sample i uses a single uniform keyed by
    (seed, i), pushed through the inverse CDF of column ``labels[i]``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    C = T.C
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise InvalidInputError("label out of range")
    n = labels.shape[0]
    u = uniforms(seed, np.arange(n), stream=NOISE_STREAM)
    cdf = np.cumsum(T.entries, axis=0)
    cdf[-1, :] = 1.0
    noisy = (u[:, None] >= cdf[:, labels].T).sum(axis=1)
    # zero-probability classes can only be hit through rounding at the cdf edges
    noisy = np.minimum(noisy, C - 1)
    mask = noisy != labels
    counts = np.bincount(labels[mask], minlength=C)
    report = NoiseReport(
        requested_rate=expected_flip_rate(T, labels),
        empirical_rate=float(mask.mean()) if n else 0.0,
        flip_counts=[int(c) for c in counts],
        n=int(n),
    )
    return noisy, mask, report


def parse_noise(text: str, C: int) -> TransitionMatrix:
    """``sym:<rate>``, ``pair:<rate>`` or ``pair:<rate>:mapping=cycle``; ``none`` for clean."""
    text = text.strip().lower()
    if text in ("", "none", "clean"):
        return symmetric_matrix(C, 0.0)
    parts = text.split(":")
    try:
        rate = float(parts[1])
    except (IndexError, ValueError):
        raise InvalidInputError(f"unrecognised noise setting {text!r}") from None
    if parts[0] in ("sym", "symmetric") and len(parts) == 2:
        return symmetric_matrix(C, rate)
    if parts[0] in ("pair", "pairflip"):
        extra = parts[2:]
        if extra and extra != ["mapping=cycle"]:
            raise InvalidInputError(f"unsupported pair-flip mapping in {text!r}")
        return pairflip_matrix(C, rate)
    raise InvalidInputError(f"unrecognised noise setting {text!r}")
