"""Value-and-gradient implementations of DSPT and baseline losses.

Every loss is evaluated on a batch of logit rows ``Z`` (n, C) with integer
labels ``y`` (n,), returning per-sample values and d(loss)/dZ. Gradients are
closed form; :func:`fd_gradient` is the numerical oracle they are tested
against.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import InvalidInputError, as_logits, log_softmax, softmax

TAGS = ("ce", "dspt", "smoothing", "logitnorm", "logitclip", "bootstrap",
        "nce", "gce", "square", "select")

DEFAULT_PARAMS = {
    "smoothing": 0.2,
    "logitnorm": 1.0,
    "bootstrap": 0.8,
    "gce": 0.7,
}

# LogitNorm divides by (||z|| + eps), as in the reference implementation
LOGITNORM_EPS = 1e-7


@dataclass(frozen=True)
class LossKind:
    tag: str
    param: float | None = None

    def __post_init__(self):
        if self.tag not in TAGS:
            raise InvalidInputError(f"unknown loss {self.tag!r}")
        if self.param is None and self.tag in DEFAULT_PARAMS:
            object.__setattr__(self, "param", DEFAULT_PARAMS[self.tag])
        if self.tag == "logitclip" and self.param is None:
            raise InvalidInputError("logitclip requires an explicit tau")
        p = self.param
        if self.tag == "smoothing" and not 0.0 < p < 1.0:
            raise InvalidInputError("smoothing alpha must lie in (0, 1)")
        if self.tag in ("logitnorm", "logitclip") and not p > 0.0:
            raise InvalidInputError("tau must be positive")
        if self.tag in ("bootstrap", "gce") and not 0.0 < p <= 1.0:
            raise InvalidInputError(f"{self.tag} parameter must lie in (0, 1]")
        if self.tag in ("ce", "dspt", "nce", "square", "select") and p is not None:
            raise InvalidInputError(f"{self.tag} takes no parameter")

    @classmethod
    def parse(cls, text: str, tau: float | None = None) -> "LossKind":
        """Parse ``name`` or ``name:param`` (e.g. ``gce:0.5``)."""
        name, _, arg = text.strip().lower().partition(":")
        name = {"coop": "ce", "selectce": "select", "squarenorm": "square"}.get(name, name)
        param = float(arg) if arg else None
        if name == "logitclip" and param is None:
            param = tau
        return cls(name, param)

    @property
    def selects(self) -> bool:
        return self.tag == "select"

    def __str__(self):
        return self.tag if self.param is None else f"{self.tag}:{self.param:g}"


@dataclass(frozen=True)
class LossEval:
    value: float
    grad: np.ndarray


def _check_labels(y, n, C):
    y = np.asarray(y)
    if y.shape != (n,):
        raise InvalidInputError("one label per logit row is required")
    if not np.issubdtype(y.dtype, np.integer):
        raise InvalidInputError("labels must be integers")
    if n and (y.min() < 0 or y.max() >= C):
        raise InvalidInputError(f"label out of range for C={C}")
    return y.astype(np.int64)


def _onehot(y, C):
    out = np.zeros((y.shape[0], C))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def _ce(Z, y):
    logp = log_softmax(Z)
    p = np.exp(logp)
    rows = np.arange(Z.shape[0])
    return -logp[rows, y], p - _onehot(y, Z.shape[1])


def _dspt(Z, y):
    rows = np.arange(Z.shape[0])
    p = softmax(Z)
    logq = log_softmax(p)
    q = np.exp(logq)
    py = p[rows, y]
    pq = np.einsum("ij,ij->i", p, q)
    grad = p * ((q - _onehot(y, Z.shape[1])) + (py - pq)[:, None])
    return -logq[rows, y], grad


def _project_out(g, Z, norm, scale):
    # d/dz of f(z * scale / norm) given g = df/du; norm = ||z|| (+eps)
    zn = np.linalg.norm(Z, axis=1)
    safe = np.where(zn > 0, zn, 1.0)
    radial = np.einsum("ij,ij->i", g, Z) / (norm * safe)
    return scale * (g - radial[:, None] * Z) / norm[:, None]


def _logitnorm(Z, y, tau):
    norm = np.linalg.norm(Z, axis=1) + LOGITNORM_EPS
    U = Z / (tau * norm[:, None])
    value, g = _ce(U, y)
    return value, _project_out(g, Z, norm, 1.0 / tau)


def _logitclip(Z, y, tau):
    norm = np.linalg.norm(Z, axis=1)
    clip = norm > tau
    U = np.where(clip[:, None], tau * Z / np.where(clip, norm, 1.0)[:, None], Z)
    value, g = _ce(U, y)
    grad = g.copy()
    if clip.any():
        grad[clip] = _project_out(g[clip], Z[clip], norm[clip], tau)
    return value, grad


def _soft_target(Z, y, target):
    logp = log_softmax(Z)
    return -np.einsum("ij,ij->i", target, logp), np.exp(logp) - target


def _smoothing(Z, y, alpha):
    C = Z.shape[1]
    return _soft_target(Z, y, (1 - alpha) * _onehot(y, C) + alpha / C)


def _bootstrap(Z, y, beta, frozen_probs=None):
    # prediction term is treated as a constant target (no gradient through it)
    pred = softmax(Z) if frozen_probs is None else frozen_probs
    return _soft_target(Z, y, beta * _onehot(y, Z.shape[1]) + (1 - beta) * pred)


def _nce(Z, y):
    C = Z.shape[1]
    logp = log_softmax(Z)
    p = np.exp(logp)
    rows = np.arange(Z.shape[0])
    num = -logp[rows, y]
    den = -logp.sum(axis=1)
    dnum = p - _onehot(y, C)
    dden = C * p - 1.0
    grad = (dnum * den[:, None] - num[:, None] * dden) / (den ** 2)[:, None]
    return num / den, grad


def _gce(Z, y, q):
    rows = np.arange(Z.shape[0])
    p = softmax(Z)
    pyq = p[rows, y] ** q
    return (1.0 - pyq) / q, pyq[:, None] * (p - _onehot(y, Z.shape[1]))


def _square(Z, y):
    # p_i^2 / sum_j p_j^2 == softmax(2 z)_i
    value, g = _ce(2.0 * Z, y)
    return value, 2.0 * g


def loss_and_grad(kind: LossKind, Z, y, frozen_probs=None):
    """Per-sample losses (n,) and gradients (n, C) for a batch of logits.

    ``frozen_probs`` only matters for bootstrap: it pins the prediction term
    of the target, which the finite-difference oracle needs.
    """
    Z = as_logits(Z)
    if Z.ndim != 2:
        raise InvalidInputError("expected a (n, C) batch of logits")
    n, C = Z.shape
    if C < 2:
        raise InvalidInputError("need at least two classes")
    y = _check_labels(y, n, C)
    tag, p = kind.tag, kind.param
    if tag in ("ce", "select"):
        return _ce(Z, y)
    if tag == "dspt":
        return _dspt(Z, y)
    if tag == "smoothing":
        return _smoothing(Z, y, p)
    if tag == "logitnorm":
        return _logitnorm(Z, y, p)
    if tag == "logitclip":
        return _logitclip(Z, y, p)
    if tag == "bootstrap":
        return _bootstrap(Z, y, p, frozen_probs)
    if tag == "nce":
        return _nce(Z, y)
    if tag == "gce":
        return _gce(Z, y, p)
    return _square(Z, y)


def _single(kind, z, y):
    z = as_logits(z)
    if z.ndim != 1:
        raise InvalidInputError("expected a single logit vector")
    if not isinstance(y, (int, np.integer)):
        raise InvalidInputError("label must be an integer")
    value, grad = loss_and_grad(kind, z[None, :], np.array([y]))
    return LossEval(float(value[0]), grad[0])


def ce_eval(z, y: int) -> LossEval:
    return _single(LossKind("ce"), z, y)


def dspt_eval(z, y: int) -> LossEval:
    return _single(LossKind("dspt"), z, y)


def baseline_eval(kind: LossKind, z, y: int) -> LossEval:
    return _single(kind, z, y)


def fd_gradient(kind: LossKind, z, y: int, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the scalar loss at ``z``."""
    if not 1e-7 <= h <= 1e-3:
        raise InvalidInputError("step h must lie in [1e-7, 1e-3]")
    z = as_logits(z)
    C = z.shape[0]
    steps = h * np.eye(C)
    Zs = np.concatenate([z + steps, z - steps])
    frozen = None
    if kind.tag == "bootstrap":
        frozen = np.repeat(softmax(z)[None, :], 2 * C, axis=0)
    values, _ = loss_and_grad(kind, Zs, np.full(2 * C, y), frozen_probs=frozen)
    return (values[:C] - values[C:]) / (2 * h)


def dspt_bounds(C: int) -> tuple[float, float]:
    """Closed interval that contains every DSPT loss value for C classes."""
    return float(np.log1p((C - 1) / np.e)), float(np.log(np.e + C - 1))
