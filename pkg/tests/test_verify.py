import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dspt import verify as V
from dspt.data import BENCHMARK, gen_synthetic
from dspt.losses import dspt_eval
from dspt.model import PrototypeModel
from dspt.noise import TransitionMatrix, pairflip_matrix, symmetric_matrix
from dspt.numerics import InvalidInputError


# -- report plumbing -------------------------------------------------------

def test_report_pass_iff_within_tolerance():
    ok = V._report("x", 3, 0.5, 1.0)
    bad = V._report("x", 3, 1.5, 1.0, witness={"z": [1.0]})
    assert ok.passed and ok.witness is None
    assert not bad.passed and bad.witness == {"z": [1.0]}
    na = V._not_applicable("x", "why")
    assert not na.applicable and not na.passed


def test_report_json_clean():
    r = V._report("x", 2, np.float64(0.1), 1.0, arr=np.arange(3), flag=np.bool_(True),
                  missing=float("nan"))
    text = json.dumps(r.to_dict(), allow_nan=False)
    back = json.loads(text)
    assert back["details"] == {"arr": [0, 1, 2], "flag": True, "missing": None}
    assert back["pass"] is True


# -- gradient formula ------------------------------------------------------

def test_formula_uniform_witness():
    g = V.prop31_formula([0.0, 0.0, 0.0], 0)
    assert g == pytest.approx([-2 / 9, 1 / 9, 1 / 9], abs=1e-15)
    assert dspt_eval(np.zeros(3), 0).grad == pytest.approx(g, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-40, 40), min_size=2, max_size=12), st.data())
def test_formula_matches_analytic(z, data):
    y = data.draw(st.integers(0, len(z) - 1))
    a = dspt_eval(np.array(z), y).grad
    assert np.abs(a - np.array(V.prop31_formula(z, y))).max() <= V.GRAD_FORMULA_TOL


def test_prop31_sweep_passes():
    r = V.check_prop31(trials=2000, seed=4)
    assert r.passed, r.witness
    assert r.details["worst_formula_abs_error"] <= 1e-10
    assert r.details["worst_fd_rel_error"] <= 1e-4


def test_prop31_rejects_zero_trials():
    with pytest.raises(InvalidInputError):
        V.check_prop31(trials=0)


# -- gradient vanishing ----------------------------------------------------

def test_confident_wrong_construction():
    rng = np.random.default_rng(0)
    z, y, y_hat = V.confident_wrong_logits(rng, 7, 1e-3)
    p = np.exp(z) / np.exp(z).sum()
    assert y != y_hat
    assert p[y_hat] == pytest.approx(1 - 1e-3, abs=1e-12)


def test_thm32_binary_small_delta():
    r = V.check_thm32([0.01], C=2, trials_per_delta=500)
    assert r.passed
    assert r.details["per_delta"][0]["max_total_l1"] <= 0.05


def test_thm32_matches_two_logit_example():
    # z = [10, 0] with label 1 is confident-wrong at delta = 1 - sigmoid(10)
    total = np.abs(dspt_eval(np.array([10.0, 0.0]), 1).grad).sum()
    delta = 1 / (1 + math.exp(10))
    assert delta == pytest.approx(4.54e-5, rel=1e-3)
    assert total <= 5 * delta
    assert total == pytest.approx(1.4e-4, rel=0.1)


def test_thm32_full_sequence():
    r = V.check_thm32(seed=1, trials_per_delta=200)
    assert r.passed and r.details["monotone"]
    last = r.details["per_delta"][-1]
    assert last["delta"] == 1e-8 and last["max_total_l1"] <= 5e-8
    # CE stays near its maximum of 2 on the same instances
    assert all(row["min_ce_total_l1"] > 1.5 for row in r.details["per_delta"])


@pytest.mark.parametrize("bad", [[0.6], [0.1, 0.2], [0.0]])
def test_thm32_delta_validation(bad):
    with pytest.raises(InvalidInputError):
        V.check_thm32(bad)


# -- loss bounds -----------------------------------------------------------

@pytest.mark.parametrize("C, lo", [(2, 0.31326), (101, 3.63199)])
def test_prop33_bounds(C, lo):
    r = V.check_prop33(trials=2000, C_range=(C,), seed=3)
    row = r.details["per_C"][0]
    assert row["lower"] == pytest.approx(lo, abs=5e-6)
    assert row["upper"] == pytest.approx(lo + 1, abs=5e-6)
    assert r.passed


def test_prop33_endpoints_reached():
    r = V.check_prop33(trials=500, C_range=(3, 10), seed=0)
    for row in r.details["per_C"]:
        assert -1e-9 <= row["lower_gap"] <= 1e-6
        assert -1e-9 <= row["upper_gap"] <= 1e-6


@pytest.mark.parametrize("C", [2, 3, 10, 101, 1000, 10_000])
def test_width_is_one_nat(C):
    assert abs(V.bound_width(C) - 1.0) <= 1e-12


# -- simplex-grid oracle ---------------------------------------------------

def test_simplex_grid_counts():
    assert V.simplex_grid(3, 4).shape == (15, 3)
    P = V.simplex_grid(3, 40)
    assert len(P) == math.comb(42, 2)
    assert np.allclose(P.sum(axis=1), 1.0)
    assert P.min() >= 0


@pytest.mark.parametrize("C, grid", [(2, 10), (2, 57), (3, 10), (3, 25), (3, 40)])
def test_grid_clean_minimizer_is_onehot(C, grid):
    assert V.grid_clean_minimizer_is_onehot(C, grid)


def test_grid_slack_by_refinement():
    # the risk gap moves by less than the 2/grid slack when the grid is refined
    T = symmetric_matrix(3, 0.4)
    labels = [0, 1, 2, 2]
    gaps = {g: (lambda R: R["f~*"] - R["f*"])(V.risk_gap(T, labels, g)[0]) for g in (20, 40, 80)}
    assert abs(gaps[20] - gaps[80]) <= 2 / 20
    assert abs(gaps[40] - gaps[80]) <= 2 / 40


def test_thm34_default_bound():
    r = V.check_thm34(C=3, eta=0.4, seed=0)
    assert r.passed
    assert r.details["bound"] == pytest.approx(0.4 / 0.6, abs=1e-12)
    assert r.trials == 20


def test_thm34_noise_free_gap_is_zero():
    r = V.check_thm34(C=3, eta=0.0, instances=5)
    assert r.passed
    assert r.details["max_gap"] == 0.0 and r.details["min_gap"] == 0.0


def test_thm34_binary_near_limit():
    assert V.check_thm34(C=2, eta=0.49, inputs=4, grid=50, instances=5).passed


def test_thm34_precondition():
    r = V.check_thm34(C=2, eta=0.7)
    assert r.status == V.NA
    with pytest.raises(InvalidInputError):
        V.check_thm34(grid=5)


def test_thm35_pairflip_constant():
    T = pairflip_matrix(3, 0.3)
    r = V.check_thm35(T=T, instances=5)
    assert r.passed
    for row in r.details["instances_detail"]:
        assert row["P_T"] == pytest.approx(0.7)
        assert row["bound"] == pytest.approx(2.1)


def test_thm35_noise_free_gap_is_zero():
    r = V.check_thm35(T=pairflip_matrix(3, 0.0), instances=4)
    assert r.passed and r.details["max_gap"] == 0.0


def test_thm35_random_admissible():
    r = V.check_thm35(C=3, seed=2)
    assert r.passed and r.trials == 20


def test_thm35_precondition():
    T = TransitionMatrix(np.array([[0.4, 0.0], [0.6, 1.0]]), "general", 0.3)
    assert V.check_thm35(T=T).status == V.NA


def test_random_admissible_is_dominant():
    rng = np.random.default_rng(9)
    for C in (2, 3, 5):
        T = V.random_admissible_matrix(C, rng)
        assert T.diagonally_dominant
        assert np.allclose(T.entries.sum(axis=0), 1.0)


# -- gradient suppression on data -------------------------------------------

@pytest.fixture(scope="module")
def bench():
    return BENCHMARK.generate()


def test_separation_on_benchmark(bench):
    train, _, anchors = bench
    noisy, _ = train.with_noise(symmetric_matrix(BENCHMARK.C, 0.6), BENCHMARK.train_seed)
    r = V.check_grad_suppression_separation(noisy, PrototypeModel(anchors, BENCHMARK.scale))
    assert r.passed
    assert r.details["separation_factor"] >= 10


def test_separation_vacuous_without_noise(bench):
    train, _, anchors = bench
    r = V.check_grad_suppression_separation(train, PrototypeModel(anchors, 30.0))
    assert r.passed and "vacuous" in r.note


def test_separation_weak_prior(bench):
    train, _, anchors = bench
    noisy, _ = train.with_noise(symmetric_matrix(BENCHMARK.C, 0.6), 0)
    r = V.check_grad_suppression_separation(noisy, PrototypeModel(anchors, 1.0))
    assert r.status == V.NA


def test_separation_weak_accuracy():
    train, _, anchors = gen_synthetic(5, 16, 200, 10, 5.0, 6.0, seed=0)
    r = V.check_grad_suppression_separation(train, PrototypeModel(anchors, 30.0))
    assert r.status == V.NA and r.details["zero_shot_acc"] < 0.8


def test_checks_deterministic():
    a = V.check_thm34(instances=3, seed=5).to_dict()
    b = V.check_thm34(instances=3, seed=5).to_dict()
    assert json.dumps(a) == json.dumps(b)
