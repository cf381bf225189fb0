import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dspt.losses import (TAGS, LossKind, baseline_eval, ce_eval, dspt_bounds, dspt_eval,
                         fd_gradient, loss_and_grad)
from dspt.numerics import InvalidInputError

ALL_KINDS = [LossKind(t, 0.5 if t == "logitclip" else None) for t in TAGS] + [
    LossKind("smoothing", 0.5), LossKind("logitnorm", 0.3), LossKind("logitclip", 3.0),
    LossKind("bootstrap", 1.0), LossKind("gce", 0.2)]


def fd_excess(a, fd, z, h=1e-5):
    """Error beyond 1e-4 relative plus the central-difference roundoff floor."""
    roundoff = 10 * np.finfo(float).eps * (1 + np.abs(z).max()) / h
    return np.abs(a - fd).max() - (1e-4 * np.abs(a).max() + roundoff)


# values frozen from a 40-digit mpmath evaluation of the closed forms
def test_ce_examples():
    r = ce_eval([0.0, 0.0], 0)
    assert r.value == pytest.approx(math.log(2), abs=1e-15)
    np.testing.assert_allclose(r.grad, [-0.5, 0.5], atol=1e-15)
    r = ce_eval([10.0, 0.0], 1)
    assert r.value == pytest.approx(10.000045398899217, abs=1e-12)
    np.testing.assert_allclose(r.grad, [0.9999546021312976, -0.9999546021312976], atol=1e-15)


def test_dspt_uniform_example():
    r = dspt_eval([0.0, 0.0, 0.0], 0)
    assert r.value == pytest.approx(math.log(3), abs=1e-15)
    np.testing.assert_allclose(r.grad, [-2 / 9, 1 / 9, 1 / 9], atol=1e-15)


def test_dspt_confident_wrong_example():
    r = dspt_eval([10.0, 0.0], 1)
    assert r.value == pytest.approx(1.3131953113259225, abs=1e-13)
    np.testing.assert_allclose(r.grad, [6.63723685556e-5, -6.63723685556e-5], rtol=1e-9)
    delta = 1 / (1 + math.exp(10))
    total = np.abs(r.grad).sum()
    assert total == pytest.approx(1.327447371111e-4, rel=1e-9)
    assert total <= 5 * delta


def test_dspt_value_range_C101():
    lo, hi = dspt_bounds(101)
    assert lo == pytest.approx(3.6319901130538899, abs=1e-12)
    assert hi == pytest.approx(4.6319901130538899, abs=1e-12)
    rng = np.random.default_rng(0)
    Z = rng.standard_normal((500, 101)) * 20
    v, _ = loss_and_grad(LossKind("dspt"), Z, rng.integers(101, size=500))
    assert v.min() >= lo and v.max() <= hi


def test_baseline_examples():
    sm = baseline_eval(LossKind("smoothing", 0.2), [0.0, 0.0], 0)
    assert sm.value == pytest.approx(math.log(2), abs=1e-15)
    ln = baseline_eval(LossKind("logitnorm", 1.0), [3.0, 4.0], 0)
    assert ln.value == pytest.approx(math.log1p(math.exp(0.2)), abs=1e-7)
    clip = baseline_eval(LossKind("logitclip", 1.0), [3.0, 4.0], 0)
    assert clip.value == pytest.approx(math.log1p(math.exp(0.2)), abs=1e-12)
    small = baseline_eval(LossKind("logitclip", 1.0), [0.3, 0.4], 0)
    assert small.value == ce_eval([0.3, 0.4], 0).value
    np.testing.assert_array_equal(small.grad, ce_eval([0.3, 0.4], 0).grad)


def test_closed_forms_of_other_baselines():
    z = np.array([1.0, -0.5, 2.0])
    p = np.exp(z) / np.exp(z).sum()
    nce = baseline_eval(LossKind("nce"), z, 1).value
    assert nce == pytest.approx(-np.log(p[1]) / -np.log(p).sum(), rel=1e-14)
    gce = baseline_eval(LossKind("gce", 0.7), z, 1).value
    assert gce == pytest.approx((1 - p[1] ** 0.7) / 0.7, rel=1e-14)
    sq = baseline_eval(LossKind("square"), z, 1).value
    assert sq == pytest.approx(-np.log(p[1] ** 2 / (p ** 2).sum()), rel=1e-13)
    boot = baseline_eval(LossKind("bootstrap", 0.8), z, 1).value
    t = 0.2 * p
    t[1] += 0.8
    assert boot == pytest.approx(-(t * np.log(p)).sum(), rel=1e-14)


def test_fd_examples():
    np.testing.assert_allclose(fd_gradient(LossKind("dspt"), [0.0, 0.0, 0.0], 0, 1e-5),
                               [-2 / 9, 1 / 9, 1 / 9], atol=1e-9)
    np.testing.assert_allclose(fd_gradient(LossKind("ce"), [0.0, 0.0], 0), [-0.5, 0.5], atol=1e-9)


@pytest.mark.parametrize("kind", ALL_KINDS, ids=str)
def test_analytic_gradient_matches_fd(kind):
    rng = np.random.default_rng(abs(hash(str(kind))) % 2**32)
    worst = -np.inf
    for _ in range(1000):
        C = int(rng.integers(2, 12))
        z = rng.normal(0, rng.choice([0.5, 3.0, 10.0]), C)
        if kind.tag == "logitclip" and abs(np.linalg.norm(z) - kind.param) < 1e-3:
            continue  # kink of the clip
        y = int(rng.integers(C))
        worst = max(worst, fd_excess(baseline_eval(kind, z, y).grad, fd_gradient(kind, z, y), z))
    assert worst <= 0


@pytest.mark.parametrize("tag", ["ce", "dspt"])
@settings(max_examples=300, deadline=None)
@given(C=st.integers(2, 40), seed=st.integers(0, 2**32 - 1), c=st.floats(-1e3, 1e3))
def test_shift_invariance_and_zero_sum(tag, C, seed, c):
    rng = np.random.default_rng(seed)
    z = rng.normal(0, 5, C)
    y = int(rng.integers(C))
    a = baseline_eval(LossKind(tag), z, y)
    b = baseline_eval(LossKind(tag), z + c, y)
    assert abs(a.value - b.value) <= 1e-10 * max(1.0, abs(a.value))
    np.testing.assert_allclose(a.grad, b.grad, atol=1e-10)
    assert abs(a.grad.sum()) <= 1e-10
    assert np.abs(a.grad).sum() <= 2 + 1e-12


@settings(max_examples=300, deadline=None)
@given(C=st.integers(2, 60), seed=st.integers(0, 2**32 - 1), spread=st.sampled_from([0.1, 1, 10, 100, 1e3]))
def test_dspt_loss_bounds(C, seed, spread):
    rng = np.random.default_rng(seed)
    Z = rng.normal(0, spread, (20, C))
    v, g = loss_and_grad(LossKind("dspt"), Z, rng.integers(C, size=20))
    lo, hi = dspt_bounds(C)
    assert v.min() >= lo - 1e-9 and v.max() <= hi + 1e-9
    assert np.abs(g).sum(axis=1).max() <= 2


@pytest.mark.parametrize("C", [2, 3, 7, 101, 1000, 10_000])
def test_bound_width_is_one_nat(C):
    lo, hi = dspt_bounds(C)
    assert abs(hi - lo - 1.0) <= 1e-12


def test_ce_gradient_surge_contrasts_dspt():
    for k in range(1, 9):
        delta = 10.0 ** -k
        z = np.log([1 - delta, delta])
        assert np.abs(ce_eval(z, 1).grad).sum() == pytest.approx(2 * (1 - delta), rel=1e-9)
        assert np.abs(dspt_eval(z, 1).grad).sum() <= 5 * delta


@pytest.mark.parametrize("bad", [
    ("smoothing", 0.0), ("smoothing", 1.0), ("logitnorm", 0.0), ("logitclip", -1.0),
    ("bootstrap", 0.0), ("bootstrap", 1.5), ("gce", 0.0), ("gce", 2.0), ("ce", 0.3)])
def test_invalid_parameters(bad):
    with pytest.raises(InvalidInputError):
        LossKind(*bad)


def test_logitclip_requires_tau():
    with pytest.raises(InvalidInputError):
        LossKind("logitclip")
    with pytest.raises(InvalidInputError):
        LossKind.parse("logitclip")
    assert LossKind.parse("logitclip", tau=0.5) == LossKind("logitclip", 0.5)
    assert LossKind.parse("gce:0.5") == LossKind("gce", 0.5)
    assert LossKind.parse("smoothing") == LossKind("smoothing", 0.2)
    assert LossKind.parse("logitnorm").param == 1.0


@pytest.mark.parametrize("y", [-1, 2, 5])
def test_label_out_of_range(y):
    with pytest.raises(InvalidInputError):
        dspt_eval([0.0, 1.0], y)
    with pytest.raises(InvalidInputError):
        ce_eval([0.0, 1.0], y)


def test_fd_step_range():
    with pytest.raises(InvalidInputError):
        fd_gradient(LossKind("ce"), [0.0, 1.0], 0, h=1e-2)


def test_batch_equals_single():
    rng = np.random.default_rng(3)
    Z = rng.normal(0, 4, (7, 5))
    y = rng.integers(5, size=7)
    for kind in ALL_KINDS:
        v, g = loss_and_grad(kind, Z, y)
        for i in range(7):
            r = baseline_eval(kind, Z[i], int(y[i]))
            assert r.value == pytest.approx(v[i], rel=1e-14, abs=1e-15)
            np.testing.assert_allclose(r.grad, g[i], rtol=1e-13, atol=1e-16)
