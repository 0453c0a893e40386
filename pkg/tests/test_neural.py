"""Neural model: forward oracles, analytic gradients, training behavior."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scamlens.errors import DimensionMismatch, ShapeMismatch, TooFewRows
from scamlens.ingest import CLASS_ORDER, ScamLabel
from scamlens.neural import (
    AttentionParams,
    DenseParams,
    LstmParams,
    ModelParams,
    TrainConfig,
    attention_forward,
    batch_loss,
    clone_params,
    init_params,
    load_model,
    loss_and_grad,
    lstm_forward,
    model_forward,
    model_from_dict,
    model_to_dict,
    named_tensors,
    params_equal,
    predict,
    save_model,
    softmax,
    train,
    zeros_like_params,
)
from scamlens.synth import make_blobs_table

from conftest import build_table


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def scalar_lstm(p: LstmParams, seq) -> list[list[float]]:
    """Pure-Python reference for the LSTM recurrence, one scalar at a time.

    c_t = i_t * cbar_t + f_t * c_{t-1}; h_t = o_t * tanh(c_t).
    """
    h_size = p.hidden
    h = [0.0] * h_size
    c = [0.0] * h_size
    outputs = []
    for x in seq:
        def gate(w, u, b, j, squash):
            pre = w[j, 0] * x + b[j]
            for m in range(h_size):
                pre += u[j, m] * h[m]
            return squash(pre)

        gate_i = [gate(p.w_i, p.u_i, p.b_i, j, _sigmoid) for j in range(h_size)]
        gate_f = [gate(p.w_f, p.u_f, p.b_f, j, _sigmoid) for j in range(h_size)]
        gate_o = [gate(p.w_o, p.u_o, p.b_o, j, _sigmoid) for j in range(h_size)]
        cbar = [gate(p.w_c, p.u_c, p.b_c, j, math.tanh) for j in range(h_size)]
        c = [gate_i[j] * cbar[j] + gate_f[j] * c[j] for j in range(h_size)]
        h = [gate_o[j] * math.tanh(c[j]) for j in range(h_size)]
        outputs.append(list(h))
    return outputs


def _random_params(hidden: int, seed: int, attention=True, scale=1.0) -> ModelParams:
    return init_params(hidden, np.random.default_rng(seed),
                       attention=attention, scale=scale)


# ---------------------------------------------------------------------------
# Forward oracles
# ---------------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 8), st.integers(0, 10**6))
def test_lstm_matches_scalar_loop(hidden, t_len, seed):
    rng = np.random.default_rng(seed)
    params = init_params(hidden, rng, scale=1.0)
    seq = rng.normal(size=t_len)
    got, trace = lstm_forward(params.lstm, seq)
    want = np.array(scalar_lstm(params.lstm, seq.tolist()))
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)
    assert got.shape == (t_len, hidden)
    assert trace["h"].shape == (t_len, hidden)
    np.testing.assert_array_equal(trace["h"], got)


def test_attention_hand_computed_t2_h1():
    wq, wk, wv = 0.7, -1.3, 2.0
    y1, y2 = 0.4, -0.9
    att = AttentionParams(np.array([[wq]]), np.array([[wk]]), np.array([[wv]]))
    q = [wq * y1, wq * y2]
    k = [wk * y1, wk * y2]
    v = [wv * y1, wv * y2]
    expected = []
    for t in range(2):
        s0, s1 = q[t] * k[0], q[t] * k[1]
        z0, z1 = math.exp(s0), math.exp(s1)
        a0, a1 = z0 / (z0 + z1), z1 / (z0 + z1)
        expected.append(a0 * v[0] + a1 * v[1])
    got = attention_forward(att, np.array([[y1], [y2]]))
    np.testing.assert_allclose(got[:, 0], expected, rtol=0, atol=1e-12)


def test_attention_scores_are_unscaled_by_default():
    """Scores must be plain Q.K^T; the 1/sqrt(H) variant is opt-in."""
    rng = np.random.default_rng(7)
    h = 4
    att = AttentionParams(*(rng.normal(size=(h, h)) for _ in range(3)))
    y = rng.normal(size=(5, h))
    q, k, v = y @ att.w_q, y @ att.w_k, y @ att.w_v
    plain = softmax(q @ k.T, axis=-1) @ v
    scaled = softmax(q @ k.T / math.sqrt(h), axis=-1) @ v
    np.testing.assert_allclose(attention_forward(att, y), plain, atol=1e-12)
    np.testing.assert_allclose(attention_forward(att, y, scaled=True), scaled,
                               atol=1e-12)
    assert not np.allclose(plain, scaled)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.1, 1000))
def test_softmax_rows_sum_to_one(seed, magnitude):
    rng = np.random.default_rng(seed)
    scores = rng.normal(size=(4, 6)) * magnitude
    rows = softmax(scores, axis=-1)
    np.testing.assert_allclose(rows.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
    assert (rows >= 0).all()


def test_model_forward_is_softmax_distribution():
    params = _random_params(5, 3)
    probs = model_forward(params, np.random.default_rng(0).normal(size=17))
    assert probs.shape == (3,)
    assert abs(probs.sum() - 1.0) < 1e-12


def test_plain_variant_uses_last_hidden_state():
    params = _random_params(4, 9, attention=False)
    assert params.attention is None
    assert all(not name.startswith("attention") for name, _ in named_tensors(params))
    x = np.random.default_rng(1).normal(size=(3, 6))
    y, _ = lstm_forward(params.lstm, x[0])
    logits = y[-1] @ params.dense.w.T + params.dense.b
    expected = np.exp(logits - logits.max())
    expected /= expected.sum()
    np.testing.assert_allclose(model_forward(params, x[0]), expected, atol=1e-12)


def test_shape_validation():
    with pytest.raises(ShapeMismatch):
        LstmParams(*([np.zeros((2, 1)), np.zeros((2, 3)), np.zeros(2)] * 4))
    with pytest.raises(ShapeMismatch):
        AttentionParams(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((3, 3)))
    att = AttentionParams(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ShapeMismatch):
        attention_forward(att, np.zeros((4, 3)))  # H mismatch
    with pytest.raises(ShapeMismatch):
        lstm_forward(_random_params(2, 0).lstm, np.array([]))


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------

def finite_difference_check(params: ModelParams, rows, labels, eps=1e-5,
                            scaled=False) -> float:
    """Worst relative error between analytic and central-difference grads."""
    _, grads = loss_and_grad(params, rows, labels, scaled=scaled)
    worst = 0.0
    for (_, tensor), (_, grad) in zip(named_tensors(params), named_tensors(grads)):
        for idx in range(tensor.size):
            orig = tensor.flat[idx]
            tensor.flat[idx] = orig + eps
            up = batch_loss(params, rows, labels, scaled=scaled)
            tensor.flat[idx] = orig - eps
            down = batch_loss(params, rows, labels, scaled=scaled)
            tensor.flat[idx] = orig
            fd = (up - down) / (2 * eps)
            rel = abs(fd - grad.flat[idx]) / max(abs(fd) + abs(grad.flat[idx]), 1e-6)
            worst = max(worst, rel)
    return worst


@pytest.mark.parametrize("hidden,attention,scaled", [
    (2, True, False), (2, False, False), (3, True, True),
])
def test_gradients_match_finite_differences(hidden, attention, scaled):
    rng = np.random.default_rng(hidden * 17 + scaled)
    params = init_params(hidden, rng, attention=attention, scale=1.0)
    rows = rng.normal(size=(2, 5))
    labels = np.array([0, 2])
    assert finite_difference_check(params, rows, labels, scaled=scaled) < 1e-4


def test_loss_matches_manual_cross_entropy():
    params = _random_params(3, 5)
    rng = np.random.default_rng(2)
    rows = rng.normal(size=(4, 6))
    labels = np.array([0, 1, 2, 1])
    probs = np.array([model_forward(params, row) for row in rows])
    manual = -np.mean([math.log(probs[i, labels[i]]) for i in range(4)])
    loss, _ = loss_and_grad(params, rows, labels)
    assert loss == pytest.approx(manual, rel=1e-12)
    assert batch_loss(params, rows, labels) == pytest.approx(manual, rel=1e-12)


def test_grad_container_shapes():
    params = _random_params(4, 0)
    zeros = zeros_like_params(params)
    for (name_a, a), (name_b, b) in zip(named_tensors(params), named_tensors(zeros)):
        assert name_a == name_b and a.shape == b.shape and not b.any()
    with pytest.raises(TooFewRows):
        loss_and_grad(params, np.empty((0, 5)), np.empty(0, dtype=int))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _tiny_table(seed=0, n_per_class=10):
    return make_blobs_table(n_per_class, n_features=5, separation=9.0, seed=seed)


def test_train_is_deterministic():
    table = _tiny_table()
    cfg = TrainConfig(hidden=4, epochs=3, seed=12, batch_size=8)
    a = train(table, 0.2, cfg)
    b = train(table, 0.2, cfg)
    assert params_equal(a.params, b.params)
    assert a.train_log == b.train_log
    c = train(table, 0.2, TrainConfig(hidden=4, epochs=3, seed=13, batch_size=8))
    assert not params_equal(a.params, c.params)


def test_train_zero_epochs_returns_init():
    table = _tiny_table()
    cfg = TrainConfig(hidden=3, epochs=0, seed=4)
    model = train(table, 0.0, cfg)
    expected = init_params(3, np.random.default_rng(4))
    assert params_equal(model.params, expected)
    assert model.train_log == [] and model.best_epoch == 0


def test_train_loss_decreases_on_separable_data():
    table = _tiny_table(n_per_class=15)
    cfg = TrainConfig(hidden=6, epochs=25, seed=1, batch_size=16,
                      learning_rate=5e-3)
    model = train(table, 0.0, cfg)
    first, last = model.train_log[0][1], model.train_log[-1][1]
    assert last < first


def test_early_stopping_halts_on_plateau():
    rng = np.random.default_rng(0)
    rows = rng.normal(size=(30, 4))
    table = build_table(rows, [int(c) for c in rng.integers(0, 3, size=30)])
    cfg = TrainConfig(hidden=4, epochs=200, seed=2, batch_size=8,
                      learning_rate=0.5, early_stop_patience=3)
    model = train(table, 0.3, cfg)
    assert len(model.train_log) < 200
    assert model.best_epoch <= len(model.train_log)


def test_train_validation_and_errors():
    with pytest.raises(TooFewRows):
        train(_tiny_table(n_per_class=3), 0.0, TrainConfig(hidden=2, epochs=1))
    with pytest.raises(ValueError):
        train(_tiny_table(), 1.0, TrainConfig(hidden=2, epochs=1))
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ValueError):
        TrainConfig(hidden=0)


def test_sgd_optimizer_runs():
    table = _tiny_table()
    cfg = TrainConfig(hidden=3, epochs=2, seed=0, optimizer="sgd",
                      learning_rate=0.01)
    model = train(table, 0.0, cfg)
    assert len(model.train_log) == 2


def test_predict_ties_resolve_to_lowest_class():
    hidden = 3
    dense = DenseParams(np.zeros((3, hidden)), np.zeros(3))
    base = _random_params(hidden, 0)
    params = ModelParams(base.lstm, base.attention, dense)
    table = _tiny_table(n_per_class=4)
    model_cfg = TrainConfig(hidden=hidden, epochs=0)
    model = train(table, 0.0, model_cfg)
    model.params.dense.w[:] = 0.0
    model.params.dense.b[:] = 0.0
    labels, probs = predict(model, table)
    assert all(lbl is CLASS_ORDER[0] for lbl in labels)
    np.testing.assert_allclose(probs, 1.0 / 3.0, atol=1e-15)


def test_predict_matches_single_row_forward():
    table = _tiny_table(n_per_class=4)
    model = train(table, 0.0, TrainConfig(hidden=4, epochs=2, seed=3))
    _, probs = predict(model, table)
    for i in range(table.n_rows):
        row_probs = model_forward(model.params, table.rows[i])
        np.testing.assert_allclose(probs[i], row_probs, rtol=0, atol=1e-12)


def test_predict_dimension_check():
    model = train(_tiny_table(), 0.0, TrainConfig(hidden=2, epochs=1))
    wrong = build_table(np.zeros((2, 3)), [0, 1])
    with pytest.raises(DimensionMismatch):
        predict(model, wrong)


def test_predict_empty_table():
    model = train(_tiny_table(), 0.0, TrainConfig(hidden=2, epochs=1))
    empty = build_table(np.empty((0, 5)), [])
    labels, probs = predict(model, empty)
    assert labels == [] and probs.shape == (0, 3)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_roundtrip_exact(tmp_path):
    from scamlens.features import scaler_fit, scaler_apply

    table = _tiny_table()
    scaler = scaler_fit(table)
    std = scaler_apply(scaler, table)
    cfg = TrainConfig(hidden=4, epochs=3, seed=8, scaled_attention=True)
    model = train(std, 0.2, cfg, scaler=scaler)
    path = tmp_path / "model.json"
    save_model(model, path)
    again = load_model(path)
    assert params_equal(again.params, model.params)
    assert again.config == model.config
    assert again.train_log == model.train_log
    assert again.feature_names == model.feature_names
    assert np.array_equal(again.scaler.means, scaler.means)
    labels_a, probs_a = predict(model, std)
    labels_b, probs_b = predict(again, std)
    assert labels_a == labels_b
    np.testing.assert_array_equal(probs_a, probs_b)


def test_checkpoint_plain_lstm(tmp_path):
    cfg = TrainConfig(hidden=3, epochs=1, seed=0, attention=False)
    model = train(_tiny_table(), 0.0, cfg)
    doc = model_to_dict(model)
    assert doc["kind"] == "lstm"
    assert not any(name.startswith("attention") for name in doc["tensors"])
    again = model_from_dict(doc)
    assert params_equal(again.params, model.params)


def test_clone_params_is_deep():
    params = _random_params(2, 0)
    dup = clone_params(params)
    dup.dense.b[0] += 1.0
    assert not params_equal(params, dup)
