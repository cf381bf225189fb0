"""Executable checks of the DSPT gradient formula, gradient vanishing, loss
bounds and risk bounds.

Each check returns a :class:`VerificationReport`. Where a check gates on
several quantities with different tolerances, ``worst_violation`` is the
largest ratio of error to its own tolerance and ``tolerance`` is 1.
"""

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .losses import LossKind, dspt_bounds, dspt_eval, fd_gradient, loss_and_grad
from .model import PrototypeModel, forward, zero_shot_predict
from .noise import TransitionMatrix, symmetric_matrix
from .numerics import InvalidInputError, softmax
from .trainer import grad_audit

PASS, FAIL, NA = "pass", "fail", "not-applicable"

GRAD_FORMULA_TOL = 1e-10
FD_REL_TOL = 1e-4
FD_STEP = 1e-5
# relative FD error is measured against max(|grad|_inf, this floor)
FD_REL_FLOOR = 1e-6
LOSS_BOUND_SLACK = 1e-9
WIDTH_TOL = 1e-12
ENDPOINT_TOL = 1e-6
SEPARATION_FACTOR = 0.1
STRONG_PRIOR_ACC = 0.8
STRONG_PRIOR_CONF = 0.5


@dataclass
class VerificationReport:
    name: str
    trials: int
    worst_violation: float
    tolerance: float
    status: str
    witness: dict | None = None
    note: str = ""
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == PASS

    @property
    def applicable(self) -> bool:
        return self.status != NA

    def to_dict(self) -> dict:
        out = asdict(self)
        out["pass"] = self.passed
        return _clean(out)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _report(name, trials, worst, tol, witness=None, note="", **details):
    status = PASS if worst <= tol else FAIL
    return VerificationReport(name, int(trials), float(worst), float(tol), status,
                              witness if status == FAIL else None, note, details)


def _not_applicable(name, note, **details):
    return VerificationReport(name, 0, float("nan"), float("nan"), NA, None, note, details)


# -- gradient formula ------------------------------------------------------

def prop31_formula(z, y):
    """DSPT gradient p_i[(q_i - [i==y]) + (p_y - sum_j p_j q_j)], in plain Python."""
    m = max(z)
    ez = [math.exp(v - m) for v in z]
    sz = math.fsum(ez)
    p = [v / sz for v in ez]
    mp = max(p)
    ep = [math.exp(v - mp) for v in p]
    sp = math.fsum(ep)
    q = [v / sp for v in ep]
    pq = math.fsum(a * b for a, b in zip(p, q))
    return [p[i] * ((q[i] - (1.0 if i == y else 0.0)) + (p[y] - pq)) for i in range(len(z))]


def _random_logits(rng, C):
    # mixes mild and near-saturated regimes; spread 60 stresses stability
    spread = rng.choice([1.0, 5.0, 20.0, 60.0])
    return rng.uniform(-spread / 2, spread / 2, C), float(spread)


def check_prop31(trials: int = 10_000, C_range=(2, 50), seed: int = 0) -> VerificationReport:
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst_formula = worst_fd = 0.0
    worst, witness = -1.0, None
    for _ in range(trials):
        C = int(rng.integers(C_range[0], C_range[1] + 1))
        z, spread = _random_logits(rng, C)
        y = int(rng.integers(C))
        grad = dspt_eval(z, y).grad
        formula = np.array(prop31_formula(z.tolist(), y))
        fd = fd_gradient(LossKind("dspt"), z, y, FD_STEP)
        e_formula = float(np.abs(grad - formula).max())
        e_fd = float(np.abs(grad - fd).max() / max(np.abs(grad).max(), FD_REL_FLOOR))
        worst_formula = max(worst_formula, e_formula)
        worst_fd = max(worst_fd, e_fd)
        ratio = max(e_formula / GRAD_FORMULA_TOL, e_fd / FD_REL_TOL)
        if ratio > worst:
            worst = ratio
            witness = {"z": z.tolist(), "y": y, "spread": spread}
    return _report("prop31", trials, worst, 1.0, witness,
                   worst_formula_abs_error=worst_formula, formula_tolerance=GRAD_FORMULA_TOL,
                   worst_fd_rel_error=worst_fd, fd_tolerance=FD_REL_TOL, fd_step=FD_STEP)


# -- gradient vanishing ----------------------------------------------------

DEFAULT_DELTAS = tuple(10.0 ** -k for k in range(1, 9))


def confident_wrong_logits(rng, C, delta):
    """Logits whose softmax puts 1 - delta on a class other than the label."""
    y = int(rng.integers(C))
    y_hat = int((y + rng.integers(1, C)) % C)
    rest = rng.dirichlet(np.ones(C - 1)) * delta
    p = np.empty(C)
    p[y_hat] = 1.0 - delta
    p[np.arange(C) != y_hat] = rest
    return np.log(np.maximum(p, 1e-300)), y, y_hat


def check_thm32(delta_sequence=DEFAULT_DELTAS, C: int | None = None, seed: int = 0,
                trials_per_delta: int = 1000) -> VerificationReport:
    """Total DSPT gradient under confident-wrong predictions is at most 5 * delta.

    ``C=None`` draws a class count in [2, 50] per trial.
    """
    deltas = [float(d) for d in delta_sequence]
    if any(not 0 < d < 0.5 for d in deltas) or any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise InvalidInputError("deltas must be decreasing and inside (0, 0.5)")
    rng = np.random.default_rng(seed)
    worst, witness = 0.0, None
    per_delta = []
    for delta in deltas:
        max_total = 0.0
        ce_min = math.inf
        for _ in range(trials_per_delta):
            c = C if C is not None else int(rng.integers(2, 51))
            z, y, _ = confident_wrong_logits(rng, c, delta)
            total = float(np.abs(dspt_eval(z, y).grad).sum())
            _, g_ce = loss_and_grad(LossKind("ce"), z[None, :], np.array([y]))
            ce_min = min(ce_min, float(np.abs(g_ce).sum()))
            max_total = max(max_total, total)
            ratio = total / (5.0 * delta)
            if ratio > worst:
                worst = ratio
                witness = {"z": z.tolist(), "y": y, "delta": delta, "total_l1": total}
        per_delta.append({"delta": delta, "max_total_l1": max_total, "bound": 5 * delta,
                          "min_ce_total_l1": ce_min})
    maxima = [r["max_total_l1"] for r in per_delta]
    monotone = all(b < a for a, b in zip(maxima, maxima[1:]))
    note = "" if monotone else "maximum total gradient is not strictly decreasing in delta"
    if not monotone:
        worst = math.inf
    return _report("thm32", trials_per_delta * len(deltas), worst, 1.0, witness, note,
                   per_delta=per_delta, monotone=monotone)


# -- loss bounds -----------------------------------------------------------

DEFAULT_CLASS_COUNTS = (2, 3, 10, 101, 1000)


def bound_width(C: int) -> float:
    lo, hi = dspt_bounds(C)
    return hi - lo


def _dspt_values(Z, y):
    values, _ = loss_and_grad(LossKind("dspt"), Z, y)
    return values


def check_prop33(trials: int = 100_000, C_range=DEFAULT_CLASS_COUNTS, seed: int = 0,
                 chunk_elems: int = 4_000_000) -> VerificationReport:
    """DSPT loss stays inside [log(1+(C-1)/e), log(e+C-1)] and nears both ends.

    A tenth of the trials (at least 2) are one-hot-limit logits with spread
    in [40, 100], half with the label on the peak and half off it.
    """
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst, witness = 0.0, None
    per_C = []
    for C in C_range:
        lo, hi = dspt_bounds(C)
        width_err = abs(bound_width(C) - 1.0)
        n_adv = max(2, trials // 10)
        n_rand = max(trials - n_adv, 0)
        vmin, vmax, excess = math.inf, -math.inf, 0.0
        rows = max(1, chunk_elems // C)
        done = 0
        while done < n_rand:
            m = min(rows, n_rand - done)
            spread = rng.choice([0.1, 1.0, 10.0, 100.0], size=(m, 1))
            Z = rng.standard_normal((m, C)) * spread
            y = rng.integers(C, size=m)
            v = _dspt_values(Z, y)
            vmin, vmax = min(vmin, v.min()), max(vmax, v.max())
            e = np.maximum(lo - v, v - hi)
            if e.max() > excess:
                excess = float(e.max())
                k = int(e.argmax())
                witness = {"C": C, "z": Z[k].tolist(), "y": int(y[k]), "value": float(v[k])}
            done += m
        # one-hot limits: label on the peak -> lower end, label elsewhere -> upper end
        done = 0
        while done < n_adv:
            m = min(rows, n_adv - done)
            peak = rng.integers(C, size=m)
            Z = np.zeros((m, C))
            Z[np.arange(m), peak] = rng.uniform(40.0, 100.0, size=m)
            on = np.arange(m) % 2 == 0
            y = np.where(on, peak, (peak + rng.integers(1, C, size=m)) % C)
            v = _dspt_values(Z, y)
            vmin, vmax = min(vmin, v.min()), max(vmax, v.max())
            e = np.maximum(lo - v, v - hi)
            if e.max() > excess:
                excess = float(e.max())
                k = int(e.argmax())
                witness = {"C": C, "z": Z[k].tolist(), "y": int(y[k]), "value": float(v[k])}
            done += m
        low_gap, high_gap = vmin - lo, hi - vmax
        ratio = max(excess / LOSS_BOUND_SLACK, width_err / WIDTH_TOL,
                    low_gap / ENDPOINT_TOL, high_gap / ENDPOINT_TOL)
        worst = max(worst, ratio)
        per_C.append({"C": C, "lower": lo, "upper": hi, "width_error": width_err,
                      "min_value": vmin, "max_value": vmax, "lower_gap": low_gap,
                      "upper_gap": high_gap, "max_excess": excess})
    big = [10, 100, 1000, 10_000]
    width_ok = max(abs(bound_width(C) - 1.0) for C in big)
    worst = max(worst, width_ok / WIDTH_TOL)
    return _report("prop33", trials * len(C_range), worst, 1.0, witness,
                   per_C=per_C, max_width_error_up_to_1e4=width_ok)


# -- risk bounds on a simplex grid -----------------------------------------

def simplex_grid(C: int, grid: int) -> np.ndarray:
    """All points of the probability simplex with coordinates in {0, 1/grid, ..., 1}."""
    if grid < 1:
        raise InvalidInputError("grid must be >= 1")
    pts = []
    for bars in itertools.combinations(range(grid + C - 1), C - 1):
        edges = (-1,) + bars + (grid + C - 1,)
        pts.append([edges[i + 1] - edges[i] - 1 for i in range(C)])
    return np.array(pts, dtype=np.float64) / grid


def grid_losses(C: int, grid: int):
    """Grid points P and the DSPT loss of each point for every label, L[m, j]."""
    P = simplex_grid(C, grid)
    Q = softmax(P)
    return P, -np.log(Q)


def _argmin_worst(primary, secondary, tol=1e-12):
    # among minimisers of `primary`, the one that is worst under `secondary`
    best = primary.min()
    cand = np.flatnonzero(primary <= best + tol)
    return int(cand[np.argmax(secondary[cand])])


def risk_gap(T: TransitionMatrix, labels, grid: int):
    """Exact clean/noisy risks of the clean and noisy global minimisers.

    Risks average over inputs with the given clean labels; the hypothesis is
    one inner-probability vector per input on the simplex grid.
    """
    C = T.C
    P, L = grid_losses(C, grid)
    clean_f, noisy_f = [], []
    R_clean = {"f*": 0.0, "f~*": 0.0}
    R_noisy = {"f*": 0.0, "f~*": 0.0}
    for y in labels:
        clean_risk = L[:, y]
        noisy_risk = L @ T.entries[:, y]
        a = _argmin_worst(clean_risk, noisy_risk)
        b = _argmin_worst(noisy_risk, clean_risk)
        clean_f.append(P[a])
        noisy_f.append(P[b])
        R_clean["f*"] += clean_risk[a]
        R_clean["f~*"] += clean_risk[b]
        R_noisy["f*"] += noisy_risk[a]
        R_noisy["f~*"] += noisy_risk[b]
    n = len(labels)
    return ({k: v / n for k, v in R_clean.items()}, {k: v / n for k, v in R_noisy.items()},
            np.array(clean_f), np.array(noisy_f))


def grid_clean_minimizer_is_onehot(C: int, grid: int) -> bool:
    P, L = grid_losses(C, grid)
    return all(np.array_equal(P[np.argmin(L[:, y])], np.eye(C)[y]) for y in range(C))


def check_thm34(C: int = 3, eta: float = 0.4, inputs: int = 4, grid: int = 40, seed: int = 0,
                instances: int = 20) -> VerificationReport:
    """Clean-risk gap of the noisy minimiser under symmetric noise."""
    if grid < 10:
        raise InvalidInputError("grid must be >= 10")
    T = symmetric_matrix(C, eta)
    if not T.symmetric_bound_applies:
        return _not_applicable("thm34", f"eta={eta} violates eta < 1 - 1/C = {1 - 1 / C:.6g}",
                               C=C, eta=eta)
    rng = np.random.default_rng(seed)
    width = bound_width(C)
    bound = width * eta / (1 - eta)
    slack = 2.0 / grid
    worst, witness, gaps = -math.inf, None, []
    for _ in range(instances):
        labels = rng.integers(C, size=inputs)
        R, _, _, _ = risk_gap(T, labels, grid)
        gap = R["f~*"] - R["f*"]
        gaps.append(gap)
        v = max(gap - (bound + slack), -gap)
        if v > worst:
            worst, witness = v, {"labels": labels.tolist(), "gap": gap}
    return _report("thm34", instances, worst, 0.0, witness,
                   C=C, eta=eta, grid=grid, inputs=inputs, bound=bound, slack=slack,
                   log_factor=width, max_gap=max(gaps), min_gap=min(gaps))


def random_admissible_matrix(C: int, rng) -> TransitionMatrix:
    """Random column-stochastic matrix whose diagonal dominates each column."""
    T = rng.dirichlet(np.ones(C), size=C).T
    for k in range(C):
        j = int(np.argmax(T[:, k]))
        T[[j, k], k] = T[[k, j], k]
    T /= T.sum(axis=0, keepdims=True)
    return TransitionMatrix(T, "general", float(1 - np.diag(T).mean()))


def check_thm35(C: int = 3, T: TransitionMatrix | None = None, inputs: int = 4, grid: int = 40,
                seed: int = 0, instances: int = 20) -> VerificationReport:
    """Noisy-risk gap of the clean minimiser under diagonally dominant noise.

    ``T=None`` draws a fresh admissible matrix per instance. The noise
    constant is the mean of T[y, y] over the instance's clean labels.
    """
    if grid < 10:
        raise InvalidInputError("grid must be >= 10")
    if T is not None:
        C = T.C
        if not T.diagonally_dominant:
            return _not_applicable("thm35", "T has an off-diagonal entry above its column's diagonal",
                                   C=C)
    rng = np.random.default_rng(seed)
    width = bound_width(C)
    slack = 2.0 / grid
    worst, witness, rows = -math.inf, None, []
    for _ in range(instances):
        Ti = T if T is not None else random_admissible_matrix(C, rng)
        labels = rng.integers(C, size=inputs)
        _, RT, _, _ = risk_gap(Ti, labels, grid)
        p_t = float(np.mean(np.diag(Ti.entries)[labels]))
        bound = C * p_t * width
        gap = RT["f*"] - RT["f~*"]
        rows.append({"gap": gap, "P_T": p_t, "bound": bound})
        v = max(gap - (bound + slack), -gap)
        if v > worst:
            worst = v
            witness = {"labels": labels.tolist(), "T": Ti.entries.tolist(), "gap": gap}
    return _report("thm35", instances, worst, 0.0, witness,
                   C=C, grid=grid, inputs=inputs, slack=slack, log_factor=width,
                   max_gap=max(r["gap"] for r in rows), instances_detail=rows)


# -- gradient suppression on data -------------------------------------------

def prior_strength(model: PrototypeModel, dataset: Dataset) -> dict:
    zs = zero_shot_predict(model, dataset.features)
    conf = softmax(forward(model, dataset.features)).max(axis=1)
    return {"zero_shot_acc": float(np.mean(zs == dataset.clean)),
            "median_confidence": float(np.median(conf))}


def check_grad_suppression_separation(dataset: Dataset, model: PrototypeModel,
                                      seed: int = 0) -> VerificationReport:
    """Epoch-0 gradient audit: DSPT mutes mislabeled samples relative to CE.

    Requires a strong prior: zero-shot accuracy >= 0.8 on the clean labels and
    median top-class probability >= 0.5 (the latter fails for small scales).
    """
    prior = prior_strength(model, dataset)
    if prior["zero_shot_acc"] < STRONG_PRIOR_ACC or prior["median_confidence"] < STRONG_PRIOR_CONF:
        return _not_applicable("grad_separation", "prior too weak for the suppression phenomenon",
                               **prior)
    ce = grad_audit(model, dataset, LossKind("ce"))
    ds = grad_audit(model, dataset, LossKind("dspt"))
    noisy = dataset.mask
    stats = {
        "ce_clean_mean": float(ce["grad_l1"][~noisy].mean()) if (~noisy).any() else float("nan"),
        "dspt_clean_mean": float(ds["grad_l1"][~noisy].mean()) if (~noisy).any() else float("nan"),
        **prior,
    }
    if not noisy.any():
        return VerificationReport("grad_separation", dataset.n, 0.0, SEPARATION_FACTOR, PASS,
                                  note="no mislabeled samples; check is vacuous", details=stats)
    ce_noisy = float(ce["grad_l1"][noisy].mean())
    ds_noisy = float(ds["grad_l1"][noisy].mean())
    stats.update(ce_noisy_mean=ce_noisy, dspt_noisy_mean=ds_noisy,
                 separation_factor=ce_noisy / ds_noisy if ds_noisy > 0 else math.inf)
    ratio = ds_noisy / ce_noisy
    clean_ok = (~noisy).sum() == 0 or stats["dspt_clean_mean"] <= stats["ce_clean_mean"]
    worst = ratio if clean_ok else math.inf
    note = "" if clean_ok else "DSPT clean-sample gradient exceeds CE's"
    return _report("grad_separation", dataset.n, worst, SEPARATION_FACTOR, None, note, **stats)


CHECKS = ("prop31", "thm32", "prop33", "thm34", "thm35", "grad_separation")
