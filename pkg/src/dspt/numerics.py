"""Stable simplex primitives."""

import numpy as np

# exp(-745) underflows to a denormal/zero in float64
_EXP_FLOOR = -745.0


class InvalidInputError(ValueError):
    pass


def as_logits(z) -> np.ndarray:
    """Validate a logit vector (or a batch of them along the last axis)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 0 or z.shape[-1] < 1:
        raise InvalidInputError("logits must have at least one entry")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logits must be finite")
    return z


def _shifted(z):
    return np.maximum(z - z.max(axis=-1, keepdims=True), _EXP_FLOOR)


def softmax(z) -> np.ndarray:
    z = as_logits(z)
    e = np.exp(_shifted(z))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z) -> np.ndarray:
    z = as_logits(z)
    return z - np.asarray(log_sum_exp(z))[..., None]


def log_sum_exp(z):
    z = as_logits(z)
    m = z.max(axis=-1)
    s = np.exp(_shifted(z)).sum(axis=-1)
    out = m + np.log(s)
    return float(out) if np.ndim(out) == 0 else out


def double_softmax(z) -> np.ndarray:
    """softmax(softmax(z)); entries lie in [1/(e+C-1), e/(e+C-1)]."""
    return softmax(softmax(z))


def double_softmax_range(C: int) -> tuple[float, float]:
    return 1.0 / (np.e + C - 1), np.e / (np.e + C - 1)
