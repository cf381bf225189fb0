import struct
import warnings

import numpy as np
import pytest

from dspt.data import (BENCHMARK, BadMagicError, Dataset, DimensionMismatchError,
                       LabelRangeError, NonFiniteError, NotUnitNormError, TruncatedError,
                       batches, gen_synthetic, load_csv, load_embeddings, save_embeddings)
from dspt.model import PrototypeModel, zero_shot_predict
from dspt.noise import symmetric_matrix
from dspt.numerics import InvalidInputError


def zero_shot_acc(ds, anchors):
    return np.mean(zero_shot_predict(PrototypeModel(anchors), ds.features) == ds.clean)


def test_synthetic_invariants_and_determinism():
    a = gen_synthetic(5, 16, 300, 100, 10.0, 0.3, seed=4)
    b = gen_synthetic(5, 16, 300, 100, 10.0, 0.3, seed=4)
    for x, y in zip(a[:2], b[:2]):
        assert x.features.tobytes() == y.features.tobytes()
        np.testing.assert_array_equal(x.clean, y.clean)
    assert a[2].tobytes() == b[2].tobytes()
    train, test, anchors = a
    assert train.split == "train" and test.split == "test"
    assert np.abs(np.linalg.norm(train.features, axis=1) - 1).max() <= 1e-6
    assert not train.mask.any()
    assert np.bincount(train.clean).tolist() == [60] * 5


def test_perfect_anchors_give_full_zero_shot_accuracy():
    _, test, anchors = gen_synthetic(10, 64, 10, 500, 1e4, 0.0, seed=2)
    assert zero_shot_acc(test, anchors) == 1.0


def test_pinned_zero_shot_regression():
    # measured once and pinned
    _, test, anchors = gen_synthetic(10, 64, 100, 2000, 20.0, 0.4, seed=1)
    acc = zero_shot_acc(test, anchors)
    assert 0.5 < acc < 0.99
    assert acc == 0.9795


def test_benchmark_prior_is_strong():
    train, test, anchors = BENCHMARK.generate()
    assert (train.n, test.n, train.C, train.d) == (5000, 2000, 20, 64)
    assert zero_shot_acc(test, anchors) == 0.824
    assert zero_shot_acc(train, anchors) >= 0.8


def test_low_dimension_warns():
    with pytest.warns(UserWarning, match="near-orthogonal"):
        gen_synthetic(10, 4, 20, 20, 5.0, 0.1, seed=0)


@pytest.mark.parametrize("kw", [dict(C=1), dict(kappa=0.0), dict(anchor_perturb=-1.0)])
def test_invalid_params(kw):
    args = dict(C=3, d=8, n_train=10, n_test=10, kappa=5.0, anchor_perturb=0.1, seed=0) | kw
    with pytest.raises(InvalidInputError):
        gen_synthetic(**args)


def test_noise_only_on_train_split():
    train, test, _ = gen_synthetic(4, 8, 400, 100, 5.0, 0.1, seed=0)
    noisy, report = train.with_noise(symmetric_matrix(4, 0.5), seed=1)
    np.testing.assert_array_equal(noisy.mask, noisy.clean != noisy.noisy)
    np.testing.assert_array_equal(noisy.clean, train.clean)
    assert report.empirical_rate == noisy.mask.mean()
    with pytest.raises(InvalidInputError):
        test.with_noise(symmetric_matrix(4, 0.5), seed=1)


def test_dataset_validates_mask():
    X = np.eye(2)
    with pytest.raises(InvalidInputError):
        Dataset(X, [0, 1], [1, 1], [False, False], 2)
    with pytest.raises(InvalidInputError):
        Dataset(2 * X, [0, 1], [0, 1], [False, False], 2)


def test_embedding_round_trip(tmp_path):
    train, _, _ = gen_synthetic(6, 12, 50, 0, 8.0, 0.2, seed=3)
    save_embeddings(train, tmp_path / "a.emb")
    back = load_embeddings(tmp_path / "a.emb")
    assert back.features.tobytes() == train.features.tobytes()
    np.testing.assert_array_equal(back.clean, train.clean)
    save_embeddings(back, tmp_path / "b.emb")
    assert (tmp_path / "a.emb").read_bytes() == (tmp_path / "b.emb").read_bytes()


def test_empty_file_is_valid(tmp_path):
    (tmp_path / "e.emb").write_bytes(struct.pack("<8sIII", b"DSPTEMB1", 0, 5, 3))
    ds = load_embeddings(tmp_path / "e.emb")
    assert ds.n == 0 and ds.C == 3


def _write(path, n, d, C, X, labels, extra=b""):
    path.write_bytes(struct.pack("<8sIII", b"DSPTEMB1", n, d, C)
                     + np.asarray(X, "<f4").tobytes() + np.asarray(labels, "<u4").tobytes() + extra)


def test_format_errors(tmp_path):
    p = tmp_path / "x.emb"
    X = np.eye(2, 3)
    _write(p, 2, 3, 2, X, [0, 1])
    raw = p.read_bytes()
    p.write_bytes(raw[:-3])
    with pytest.raises(TruncatedError, match="byte offset 49"):
        load_embeddings(p)
    p.write_bytes(b"NOTMAGIC" + raw[8:])
    with pytest.raises(BadMagicError):
        load_embeddings(p)
    _write(p, 2, 3, 2, X, [0, 1], extra=b"\0" * 4)
    with pytest.raises(DimensionMismatchError):
        load_embeddings(p)
    _write(p, 2, 3, 2, X, [0, 2])
    with pytest.raises(LabelRangeError):
        load_embeddings(p)
    _write(p, 2, 3, 2, [[np.nan, 0, 0], [0, 1, 0]], [0, 1])
    with pytest.raises(NonFiniteError):
        load_embeddings(p)
    _write(p, 2, 3, 2, [[2.0, 0, 0], [0, 1, 0]], [0, 1])
    with pytest.raises(NotUnitNormError):
        load_embeddings(p)
    codes = {e.code for e in (BadMagicError, TruncatedError, DimensionMismatchError,
                              LabelRangeError, NonFiniteError, NotUnitNormError)}
    assert len(codes) == 6


def test_near_unit_rows_are_renormalised(tmp_path):
    p = tmp_path / "x.emb"
    _write(p, 2, 2, 2, [[1.0005, 0.0], [0.0, 1.0]], [0, 1])
    ds = load_embeddings(p)
    np.testing.assert_allclose(np.linalg.norm(ds.features, axis=1), 1.0, atol=1e-12)


def test_csv_import(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("label,f0,f1\n0,1.0,0.0\n1,0.6,0.8\n")
    ds = load_csv(p)
    assert ds.C == 2 and ds.d == 2
    np.testing.assert_allclose(ds.features[1], [0.6, 0.8])
    p.write_text("label,f0,f1\n0,1.0\n")
    with pytest.raises(DimensionMismatchError):
        load_csv(p)


def test_batches():
    assert [len(b) for b in batches(5, 2, seed=0, epoch=0)] == [2, 2, 1]
    for e in range(3):
        order = np.concatenate(batches(100, 32, seed=9, epoch=e))
        assert sorted(order.tolist()) == list(range(100))
        np.testing.assert_array_equal(order, np.concatenate(batches(100, 32, seed=9, epoch=e)))
    a = np.concatenate(batches(32, 8, seed=9, epoch=0))
    b = np.concatenate(batches(32, 8, seed=9, epoch=1))
    assert not np.array_equal(a, b)
    with pytest.raises(InvalidInputError):
        batches(5, 0, seed=0, epoch=0)
