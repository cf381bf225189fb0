"""Mini-batch SGD over the prompt shift, with per-group loss/gradient logging."""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset, batches
from .losses import LossKind, dspt_bounds, loss_and_grad
from .model import PrototypeModel, backward, forward
from .noise import NoiseReport, parse_noise
from .numerics import InvalidInputError

METRIC_COLUMNS = ("epoch", "test_acc", "clean_loss_mean", "noisy_loss_mean",
                  "clean_grad_l1_mean", "noisy_grad_l1_mean", "lr")
# slack for the online DSPT loss-interval check
BOUND_SLACK = 1e-9


class NumericAbort(ArithmeticError):
    pass


@dataclass
class TrainConfig:
    loss: LossKind = field(default_factory=lambda: LossKind("dspt"))
    epochs: int = 50
    batch: int = 32
    lr0: float = 0.002
    seed: int = 0
    noise: str = "none"
    mode: str = "shared"
    scale: float = 30.0
    selection: bool = False

    def __post_init__(self):
        if isinstance(self.loss, str):
            self.loss = LossKind.parse(self.loss)
        if self.epochs < 1:
            raise InvalidInputError("epochs must be >= 1")
        if self.batch < 1:
            raise InvalidInputError("batch must be >= 1")
        if not self.lr0 > 0:
            raise InvalidInputError("lr0 must be positive")

    @property
    def selects(self) -> bool:
        return self.selection or self.loss.selects

    def to_dict(self) -> dict:
        out = asdict(self)
        out["loss"] = str(self.loss)
        return out


def cosine_lr(lr0: float, epoch: int, epochs: int) -> float:
    return lr0 * (1.0 + math.cos(math.pi * epoch / epochs)) / 2.0


@dataclass
class MetricsLog:
    rows: list[dict] = field(default_factory=list)
    initial_acc: float = float("nan")
    kept: list[int] = field(default_factory=list)
    bound_violations: int = 0

    @property
    def final_acc(self) -> float:
        """Mean test accuracy over the last five epochs."""
        return float(np.mean([r["test_acc"] for r in self.rows[-5:]]))

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "columns": list(METRIC_COLUMNS),
            "rows": [{c: _jsonable(r[c]) for c in METRIC_COLUMNS} for r in self.rows],
            "initial_acc": self.initial_acc,
            "final_acc": self.final_acc,
            "kept_per_epoch": self.kept,
            "dspt_bound_violations": self.bound_violations,
        }


def _fmt(v):
    # empty cell marks an empty sample group
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _jsonable(v):
    return None if isinstance(v, float) and math.isnan(v) else v


def _group_mean(values, mask):
    return float(values[mask].mean()) if mask.any() else float("nan")


def evaluate(model: PrototypeModel, test_set: Dataset) -> float:
    """Accuracy against clean labels; argmax ties go to the lowest index."""
    if test_set.n == 0:
        raise InvalidInputError("cannot evaluate on an empty test set")
    pred = np.argmax(forward(model, test_set.features), axis=1)
    return float(np.mean(pred == test_set.clean))


def grad_audit(model: PrototypeModel, train_set: Dataset, loss: LossKind) -> dict:
    """Per-sample L1 norm of d(loss)/dz at the model's current parameters."""
    Z = forward(model, train_set.features)
    _, G = loss_and_grad(loss, Z, train_set.noisy)
    return {
        "index": np.arange(train_set.n),
        "is_noisy": train_set.mask.copy(),
        "grad_l1": np.abs(G).sum(axis=1),
    }


def audit_csv(records: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("index", "is_noisy", "grad_l1"))
    for i, noisy, g in zip(records["index"], records["is_noisy"], records["grad_l1"]):
        w.writerow((int(i), int(noisy), repr(float(g))))
    return buf.getvalue()


def _check_dims(model, *sets):
    for ds in sets:
        if ds.d != model.d or ds.C != model.C:
            raise InvalidInputError(
                f"{ds.split} set has (C={ds.C}, d={ds.d}); model expects (C={model.C}, d={model.d})")


def train(config: TrainConfig, train_set: Dataset, test_set: Dataset,
          model: PrototypeModel) -> MetricsLog:
    """Fit ``model.shift`` in place on ``train_set.noisy`` labels.

    The learning rate follows a per-epoch cosine decay from ``lr0`` to zero.
    Loss and gradient statistics are taken from each batch's forward pass
    before its update.
    """
    _check_dims(model, train_set, test_set)
    log = MetricsLog(initial_acc=evaluate(model, test_set))
    lo, hi = dspt_bounds(model.C)
    X, y, mask = train_set.features, train_set.noisy, train_set.mask
    for epoch in range(config.epochs):
        lr = cosine_lr(config.lr0, epoch, config.epochs)
        losses = np.empty(train_set.n)
        gl1 = np.empty(train_set.n)
        kept = 0
        for b, idx in enumerate(batches(train_set.n, config.batch, config.seed, epoch)):
            idx = np.sort(idx)
            Xb = X[idx]
            Z = forward(model, Xb)
            values, G = loss_and_grad(config.loss, Z, y[idx])
            if not (np.all(np.isfinite(values)) and np.all(np.isfinite(G))):
                bad = idx[~np.isfinite(values) | ~np.all(np.isfinite(G), axis=1)]
                raise NumericAbort(
                    f"non-finite loss at epoch {epoch}, batch {b}, samples {bad[:5].tolist()}")
            losses[idx] = values
            gl1[idx] = np.abs(G).sum(axis=1)
            if config.loss.tag == "dspt":
                log.bound_violations += int(np.sum((values < lo - BOUND_SLACK) | (values > hi + BOUND_SLACK)))
            if config.selects:
                keep = Z[np.arange(len(idx)), y[idx]] >= Z.max(axis=1)
                Xb, G = Xb[keep], G[keep]
                kept += int(keep.sum())
                if not keep.any():
                    continue
            with np.errstate(over="ignore", invalid="ignore"):
                model.shift -= lr * backward(model, Xb, G / Xb.shape[0])
            if not np.all(np.isfinite(model.shift)):
                raise NumericAbort(f"parameters became non-finite at epoch {epoch}, batch {b}")
        log.kept.append(kept if config.selects else train_set.n)
        log.rows.append({
            "epoch": epoch,
            "test_acc": evaluate(model, test_set),
            "clean_loss_mean": _group_mean(losses, ~mask),
            "noisy_loss_mean": _group_mean(losses, mask),
            "clean_grad_l1_mean": _group_mean(gl1, ~mask),
            "noisy_grad_l1_mean": _group_mean(gl1, mask),
            "lr": lr,
        })
    return log


@dataclass
class RunResult:
    log: MetricsLog
    model: PrototypeModel
    train_set: Dataset
    noise_report: NoiseReport
    zero_shot_acc: float


def run_experiment(config: TrainConfig, train_set: Dataset, test_set: Dataset,
                   anchors) -> RunResult:
    """Corrupt the train labels per ``config.noise``, build a fresh model and train it."""
    T = parse_noise(config.noise, train_set.C)
    noisy_set, report = train_set.with_noise(T, config.seed)
    model = PrototypeModel(anchors, config.scale, config.mode)
    zs = evaluate(model, test_set)
    log = train(config, noisy_set, test_set, model)
    return RunResult(log, model, noisy_set, report, zs)


def dumps(obj) -> str:
    """Canonical JSON used for every emitted file."""
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
