import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jsporacle.features import sequence_inputs
from jsporacle.oracle import (DEFAULT_SCHEDULE, EmptyInput, OracleModel, ShapeMismatch, TrainConfig, binary_report,
                              evaluate_loss, format_report, forward, initial_state, kl_loss, loss_and_grads, predict,
                              predict_sequences, scaled_schedule, train, write_history, wta)

from .gradcheck import max_relative_error, random_point


def test_shapes_and_config():
    m = OracleModel.init()
    assert m.params["proj0.W"].shape == (18, 32)
    assert m.params["gru1.Wh"].shape == (32, 96)
    assert m.params["head0.W"].shape == (64, 32)
    assert m.params["head2.W"].shape == (16, 2)
    assert TrainConfig().epochs == 100 and TrainConfig().batch_size == 128
    assert TrainConfig().schedule == DEFAULT_SCHEDULE


@pytest.mark.parametrize("total", [1, 4, 10, 25, 37, 100])
def test_scaled_schedule(total):
    sched = scaled_schedule(total)
    assert sum(e for e, _ in sched) == total
    rates = [lr for _, lr in sched]
    assert rates == sorted(rates, reverse=True)
    if total == 100:
        assert sched == DEFAULT_SCHEDULE


def test_forward_softmax_law():
    m = OracleModel.init(seed=1)
    X = np.random.default_rng(0).normal(size=(7, 6, 18))
    y, logits = forward(m, X)
    q = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    assert np.all((y > 0) & (y < 1))
    assert np.allclose(q[:, 0], y, atol=1e-12) and np.allclose(q.sum(axis=1), 1, atol=1e-12)
    y1, l1 = forward(m, X[3])
    assert y1 == pytest.approx(y[3], abs=1e-14)
    y2, _ = forward(m, X)
    assert np.array_equal(y, y2)


def test_forward_shape_errors():
    m = OracleModel.init()
    with pytest.raises(ShapeMismatch):
        forward(m, np.zeros((2, 3, 17)))
    with pytest.raises(ShapeMismatch):
        forward(m, np.zeros((2, 0, 18)))
    with pytest.raises(ValueError):
        forward(m, np.zeros((2, 3, 18)), train=True)


def test_warm_start_is_order_free():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(5, 18))
    W, b = rng.normal(size=(18, 32)), rng.normal(size=32)
    s = initial_state(X, W, b)
    for _ in range(5):
        assert np.allclose(initial_state(X[rng.permutation(5)], W, b), s, atol=1e-14)


def test_kl_loss_examples():
    assert kl_loss(np.array([[0.3, 0.7]]), [0.3]) == pytest.approx(0.0, abs=1e-15)
    assert kl_loss(np.array([[0.5, 0.5]]), [1.0]) == pytest.approx(math.log(2))
    assert kl_loss(np.array([0.5]), [1.0]) == pytest.approx(math.log(2))
    assert np.isfinite(kl_loss(np.array([[0.0, 1.0]]), [1.0]))


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(1e-3, 1)), min_size=1, max_size=50))
def test_kl_loss_non_negative(pairs):
    q = np.array([p for p, _ in pairs])
    y = np.array([t for _, t in pairs])
    assert kl_loss(q, y) >= -1e-12


@pytest.mark.parametrize("seed", [0, 7])
def test_gradients_match_finite_differences(seed):
    model, X, y = random_point(seed)
    assert max_relative_error(model, X, y) < 1e-4
    assert max_relative_error(model, X, y, train=True, seed=seed) < 1e-4


def test_symmetric_head_has_zero_gradient():
    model, X, _ = random_point(1)
    model.params["head2.W"][...] = 0
    model.params["head2.b"][...] = 0
    _, g = loss_and_grads(model, X, np.full(len(X), 0.5))
    assert np.abs(g["head2.b"]).max() < 1e-15
    assert all(np.abs(v).max() < 1e-15 for v in g.values())


def test_unused_input_columns_get_no_gradient():
    model, X, y = random_point(2)
    X[:, :, 1] = 0.0
    _, g = loss_and_grads(model, X, y)
    for name in ("proj0.W", "proj1.W", "gru0.Wx"):
        assert np.all(g[name][1] == 0)


def test_save_load_round_trip(tmp_path):
    m = OracleModel.init(seed=4)
    m.fit_scaler(np.random.default_rng(0).normal(3, 2, (50, 18)))
    m.save(tmp_path / "w.bin")
    back = OracleModel.load(tmp_path / "w.bin")
    X = np.random.default_rng(1).normal(size=(3, 5, 18))
    assert np.array_equal(forward(m, X)[1], forward(back, X)[1])
    assert (back.g, back.d, back.head, back.dropout) == (18, 32, (32, 16), 0.3)


def test_load_rejects_foreign_files(tmp_path):
    path = tmp_path / "junk.bin"
    np.savez(open(path, "wb"), __header__=np.array('{"format": "other"}'))
    with pytest.raises(ValueError):
        OracleModel.load(path)


def test_wta_examples():
    assert wta([0.56, 0.81], [0.5, 0.8], 0.05) == 0.5
    y = np.random.default_rng(0).uniform(size=20)
    assert wta(y, y, 1e-9) == 1.0
    with pytest.raises(EmptyInput):
        wta([], [], 0.1)
    with pytest.raises(ShapeMismatch):
        wta([0.1], [0.1, 0.2], 0.1)
    with pytest.raises(ValueError):
        wta([0.1], [0.1], 0)


def _logits(pos_mask):
    return np.where(np.asarray(pos_mask)[:, None], [[1.0, 0.0]], [[0.0, 1.0]])


def test_binary_report_examples():
    y = np.array([0.9, 0.8, 0.3, 0.2])
    perfect = binary_report(_logits(y > 0.5), y, [0.5])[0]
    assert perfect["accuracy"] == perfect["precision"] == perfect["recall"] == 1.0
    allpos = binary_report(_logits([True] * 4), y, [0.5])[0]
    assert allpos["accuracy"] == 0.5 and allpos["recall"] == 1.0 and allpos["precision"] == 0.5
    assert allpos["balanced_accuracy"] == 0.5
    # hand-checked mixed case: tp=1, fn=1, fp=1, tn=1 at 0.5; at 0.85 only one positive
    mixed = binary_report(_logits([True, False, True, False]), y, [0.5, 0.85])
    assert mixed[0]["accuracy"] == 0.5 and mixed[0]["precision"] == 0.5 and mixed[0]["recall"] == 0.5
    assert mixed[1]["positives"] == 1 and mixed[1]["negatives"] == 3
    assert mixed[1]["imbalance_ratio"] == 3.0 and mixed[1]["accuracy"] == 0.75
    assert mixed[1]["balanced_accuracy"] == pytest.approx((1 + 2 / 3) / 2)


def test_binary_report_degenerate_and_ratio():
    rows = binary_report(_logits([True, True]), [0.9, 0.95], [0.5])
    assert rows[0]["degenerate"] and rows[0]["balanced_accuracy"] is None and rows[0]["imbalance_ratio"] == 0.0
    rows = binary_report(_logits([False, False]), [0.1, 0.2], [0.5])
    assert rows[0]["imbalance_ratio"] is None and rows[0]["recall"] is None and rows[0]["precision"] is None
    with pytest.raises(ValueError):
        binary_report(_logits([True]), [0.9], [1.0])
    with pytest.raises(EmptyInput):
        binary_report(np.zeros((0, 2)), [], [0.5])
    assert f"{15583 / 38817:.2f}" == "0.40"
    assert "n/a" in format_report(rows)


@pytest.fixture(scope="module")
def small_arrays(small_dataset):
    samples, insts, _ = small_dataset
    return sequence_inputs(samples, insts)


def test_training_reduces_loss_and_is_deterministic(small_arrays, tmp_path):
    seqs, y = small_arrays
    cfg = TrainConfig(batch_size=32, schedule=((2, 0.005),), seed=3)
    before = evaluate_loss(OracleModel.init(seed=3), seqs, y)
    a, hist = train(OracleModel.init(seed=3), seqs, y, cfg, seqs, y)
    b, _ = train(OracleModel.init(seed=3), seqs, y, cfg)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert np.array_equal(a.input_mean, b.input_mean)
    assert evaluate_loss(a, seqs, y) < before
    assert [h["epoch"] for h in hist] == [1, 2] and "test_wta07" in hist[0]
    write_history(hist, tmp_path / "h.tsv")
    lines = (tmp_path / "h.tsv").read_text().splitlines()
    assert lines[0].split("\t")[:3] == ["epoch", "lr", "train_loss"] and len(lines) == 3
    with pytest.raises(EmptyInput):
        train(OracleModel.init(), [], [], cfg)


def test_order_sensitivity_after_training(small_arrays):
    seqs, y = small_arrays
    model, _ = train(OracleModel.init(seed=0), seqs, y, TrainConfig(batch_size=32, schedule=((2, 0.005),)))
    X = np.stack(seqs[:100])
    fwd, _ = predict(model, X)
    rev, _ = predict(model, X[:, ::-1])
    assert np.abs(fwd - rev).max() > 1e-6
    yh, logits = predict_sequences(model, seqs[:10])
    assert np.allclose(yh, fwd[:10])
