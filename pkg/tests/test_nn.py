import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

from loadtl.nn import (Adam, DivergenceError, EarlyStopping, Hyperparameters, MLPModel, TrainConfig, WindowSet,
                       fit_scaler, forward, gradients, init_model, load_model, make_windows, model_from_text,
                       model_to_text, mse, save_model, train)

from conftest import local_series
from oracles import finite_difference_grads


def small_model(seed, sizes=(4,), lookback=5, horizon=3, activation="relu", lr=1e-3, batch=8):
    hp = Hyperparameters(layer_sizes=sizes, lookback=lookback, learning_rate=lr, batch_size=batch,
                         horizon=horizon)
    return init_model(hp, seed, activation)


def zero_model(hp):
    dims = [hp.lookback, *hp.layer_sizes, hp.horizon]
    return MLPModel([np.zeros((i, o)) for i, o in zip(dims[:-1], dims[1:])],
                    [np.zeros(o) for o in dims[1:]], hp)


# --- forward --------------------------------------------------------------

def test_forward_zero_model():
    m = zero_model(Hyperparameters((8, 8)))
    out = forward(m, np.random.default_rng(0).normal(size=168))
    np.testing.assert_array_equal(out, np.zeros(24))


def test_forward_single_neuron_hand_arithmetic():
    hp = Hyperparameters((1,), lookback=168)
    w_out = np.linspace(-1, 1, 24)[None, :]
    b_out = np.arange(24.0)
    m = MLPModel([np.ones((168, 1)), w_out], [np.zeros(1), b_out], hp)
    np.testing.assert_allclose(forward(m, np.ones(168)), 168 * w_out[0] + b_out, rtol=0, atol=1e-12)


def test_forward_relu_blocks_negative():
    hp = Hyperparameters((2,), lookback=1, horizon=1)
    m = MLPModel([np.array([[1.0, -1.0]]), np.array([[1.0], [5.0]])], [np.zeros(2), np.zeros(1)], hp)
    assert forward(m, np.array([2.0]))[0] == 2.0      # second neuron's pre-activation is -2


def test_forward_dimension_mismatch():
    with pytest.raises(ValueError):
        forward(small_model(0), np.ones(4))


def test_forward_batch_matches_rows():
    m = small_model(1)
    X = np.random.default_rng(1).normal(size=(6, 5))
    np.testing.assert_allclose(forward(m, X)[2], forward(m, X[2]), rtol=1e-14, atol=1e-15)


@given(st.floats(0.01, 100), st.integers(0, 1000))
def test_relu_positive_homogeneity(c, seed):
    m = small_model(seed, sizes=(6, 5))
    x = np.random.default_rng(seed).normal(size=5)
    np.testing.assert_allclose(forward(m, c * x), c * forward(m, x), rtol=1e-9, atol=1e-12)


# --- gradients ------------------------------------------------------------

@pytest.mark.parametrize("activation", ["relu", "sigmoid", "tanh"])
@pytest.mark.parametrize("seed", range(3))
def test_gradients_finite_differences(activation, seed):
    rng = np.random.default_rng(seed)
    m = small_model(seed, sizes=(5, 4), activation=activation)
    for b in m.biases:
        b += rng.normal(scale=0.1, size=b.shape)
    X, Y = rng.normal(size=(7, 5)), rng.normal(size=(7, 3))
    grads, loss = gradients(m, X, Y)
    assert loss == pytest.approx(mse(m, X, Y), rel=1e-14)
    fd = finite_difference_grads(lambda: mse(m, X, Y), m.params())
    for g, f in zip(grads, fd):
        np.testing.assert_allclose(g, f, rtol=1e-4, atol=1e-7)


def test_gradients_zero_at_target():
    m = small_model(3)
    X = np.random.default_rng(3).normal(size=(4, 5))
    grads, loss = gradients(m, X, forward(m, X))
    assert loss == 0.0
    assert all(np.all(g == 0) for g in grads)


def test_gradients_duplicated_batch():
    m = small_model(4)
    rng = np.random.default_rng(4)
    X, Y = rng.normal(size=(5, 5)), rng.normal(size=(5, 3))
    g1, l1 = gradients(m, X, Y)
    g2, l2 = gradients(m, np.r_[X, X], np.r_[Y, Y])
    assert l1 == pytest.approx(l2, rel=1e-14)
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_gradients_non_finite():
    m = small_model(5)
    m.weights[0][0, 0] = np.inf
    with pytest.raises(DivergenceError):
        gradients(m, np.ones((2, 5)), np.ones((2, 3)))


# --- ADAM -----------------------------------------------------------------

def test_adam_first_step():
    p = np.array([0.0])
    Adam(lr=1e-3).step([p], [np.array([1.0])])
    assert p[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)


def test_adam_zero_gradient():
    p = np.array([1.5, -2.0])
    opt = Adam(lr=1e-2)
    for _ in range(50):
        opt.step([p], [np.zeros(2)])
    np.testing.assert_array_equal(p, [1.5, -2.0])


@pytest.mark.parametrize("g", [1e-3, 1.0, 1e3])
def test_adam_constant_gradient_step_size(g):
    p = np.array([0.0])
    opt = Adam(lr=1e-3)
    prev = 0.0
    for _ in range(1000):
        opt.step([p], [np.array([g])])
        step, prev = prev - p[0], p[0]
    assert step == pytest.approx(1e-3, rel=1e-4)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        Adam().step([np.zeros(2)], [np.zeros(3)])


# --- windows --------------------------------------------------------------

def ramp(n, start="2021-01-01"):
    return local_series(np.arange(n, dtype=float), start=start)


def test_windows_exact_count():
    ws = make_windows(ramp(168 + 24), 168)
    assert len(ws) == 1
    np.testing.assert_array_equal(ws.targets[0], np.arange(168, 192))


def test_windows_two_samples():
    ws = make_windows(ramp(168 + 48), 168)
    assert len(ws) == 2
    assert ws.targets[0, -1] < ws.targets[1, 0]


def test_windows_index_oracle():
    lb = 48
    s = ramp(24 * 10 + 7, start="2021-01-01 05:00")
    ws = make_windows(s, lb)
    starts = [a for a in range(lb, len(s) - 24 + 1) if (5 + a) % 24 == 0]
    assert len(ws) == len(starts)
    for k, a in enumerate(starts):
        np.testing.assert_array_equal(ws.inputs[k], np.arange(a - lb, a))
        np.testing.assert_array_equal(ws.targets[k], np.arange(a, a + 24))
        assert ws.anchors[k] == s.start + pd.Timedelta(hours=a)
        assert ws.anchors[k].hour == 0


def test_windows_hourly_stride():
    ws = make_windows(ramp(100), 48, anchored=False)
    assert len(ws) == 100 - 48 - 24 + 1


def test_windows_span_restriction():
    s = ramp(24 * 20)
    ws = make_windows(s, 72, start=pd.Timestamp("2021-01-10"), stop=pd.Timestamp("2021-01-15"))
    assert ws.anchors[0] == pd.Timestamp("2021-01-10") and ws.anchors[-1] == pd.Timestamp("2021-01-14")
    assert ws.inputs[0][0] == 9 * 24 - 72


def test_windows_too_short():
    with pytest.raises(ValueError, match="too short"):
        make_windows(ramp(100), 168)


def test_windows_reject_missing():
    v = np.arange(24 * 10, dtype=float)
    v[50] = np.nan
    with pytest.raises(ValueError, match="missing"):
        make_windows(local_series(v, start="2021-01-01"), 48)


# --- scaler ---------------------------------------------------------------

def test_scaler_two_values():
    sc = fit_scaler([0.0, 2.0])
    assert (sc.mean, sc.std) == (1.0, 1.0)
    np.testing.assert_array_equal(sc.transform([0.0, 2.0]), [-1.0, 1.0])


def test_scaler_round_trip():
    x = np.random.default_rng(0).uniform(1e3, 5e4, 1000)
    sc = fit_scaler(x[:500])
    np.testing.assert_allclose(sc.inverse(sc.transform(x)), x, rtol=1e-12)


def test_scaler_rejects_constant():
    with pytest.raises(ValueError):
        fit_scaler([3.0, 3.0, 3.0])


def test_scaler_no_leakage():
    rng = np.random.default_rng(2)
    train_part, test_part = rng.normal(10, 2, 300), rng.normal(50, 9, 100)
    sc = fit_scaler(train_part)
    oracle = (test_part - train_part.mean()) / train_part.std()
    np.testing.assert_allclose(sc.transform(test_part), oracle, rtol=1e-12)


# --- training -------------------------------------------------------------

def test_early_stopping_arithmetic():
    es = EarlyStopping(10)
    assert not es.update(0, 5.0)
    assert not es.update(1, 1.0)
    stops = [es.update(e, 1.0) for e in range(2, 12)]
    assert stops == [False] * 9 + [True]          # stops at epoch 1 + 10
    assert es.best_epoch == 1


def linear_problem(n=256, lookback=8, horizon=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, lookback))
    Y = 2 * X[:, -horizon:]
    return WindowSet(X, Y, pd.DatetimeIndex([pd.Timestamp("2021-01-01")] * n))


def test_train_learns_linear_map():
    tr, va = linear_problem(1024, seed=0), linear_problem(256, seed=1)
    m = small_model(0, sizes=(64,), lookback=8, horizon=4, lr=3e-3, batch=32)
    best, hist = train(m, tr, va, TrainConfig(max_epochs=200, patience=10, seed=0))
    assert mse(best, tr.inputs, tr.targets) < 1e-3
    assert hist.best_val_loss == min(hist.val_loss)


def test_train_returns_best_epoch_and_is_deterministic():
    tr, va = linear_problem(seed=0), linear_problem(64, seed=1)
    m = small_model(0, sizes=(8,), lookback=8, horizon=4, lr=1e-2, batch=16)
    cfg = TrainConfig(max_epochs=40, patience=5, seed=3)
    a, ha = train(m, tr, va, cfg)
    b, hb = train(m, tr, va, cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a.params(), b.params()))
    assert ha.val_loss == hb.val_loss
    assert mse(a, va.inputs, va.targets) == pytest.approx(min(ha.val_loss), rel=1e-12)
    assert ha.stopped_epoch <= 40


def test_train_zero_epochs_returns_input():
    tr = linear_problem(32)
    m = small_model(1, lookback=8, horizon=4)
    out, hist = train(m, tr, tr, TrainConfig(max_epochs=0, patience=1))
    assert all(np.array_equal(x, y) for x, y in zip(out.params(), m.params()))
    assert hist.stopped_epoch == 0 and len(hist.val_loss) == 1


def test_train_patience_never_triggers_when_improving():
    tr = linear_problem(64)
    m = small_model(2, sizes=(16,), lookback=8, horizon=4, lr=1e-4, batch=64)
    _, hist = train(m, tr, tr, TrainConfig(max_epochs=15, patience=10, seed=0))
    if all(b < a for a, b in zip(hist.val_loss, hist.val_loss[1:])):
        assert hist.stopped_epoch == 15 and hist.best_epoch == 15


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence():
    tr = linear_problem(32)
    m = small_model(1, lookback=8, horizon=4, lr=1e300, batch=8)
    with pytest.raises(DivergenceError):
        train(m, tr, tr, TrainConfig(max_epochs=5, patience=2))


def test_train_rejects_empty():
    tr = linear_problem(8)
    empty = WindowSet(np.empty((0, 8)), np.empty((0, 4)), pd.DatetimeIndex([]))
    with pytest.raises(ValueError):
        train(small_model(0, lookback=8, horizon=4), tr, empty)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(patience=0)


# --- persistence ----------------------------------------------------------

def test_model_text_round_trip(tmp_path):
    m = small_model(7, sizes=(3, 2), activation="tanh", lr=1.2345678901234567e-4)
    text = model_to_text(m)
    assert text.splitlines()[0].startswith("loadtl-mlp 1 ")
    back = model_from_text(text)
    assert back.hparams == m.hparams and back.activation == "tanh"
    assert all(np.array_equal(a, b) for a, b in zip(back.params(), m.params()))
    save_model(m, tmp_path / "m.txt")
    assert (tmp_path / "m.txt").read_text() == text
    assert model_to_text(load_model(tmp_path / "m.txt")) == text


def test_model_text_rejects_garbage():
    with pytest.raises(ValueError):
        model_from_text("something else\n")


def test_hyperparameters_validation():
    with pytest.raises(ValueError):
        Hyperparameters(())
    with pytest.raises(ValueError):
        Hyperparameters((8,), learning_rate=0)
    assert Hyperparameters((8, 16)).num_layers == 2


def test_init_is_seeded_he_uniform():
    hp = Hyperparameters((64,), lookback=168)
    a, b = init_model(hp, 1), init_model(hp, 1)
    assert all(np.array_equal(x, y) for x, y in zip(a.params(), b.params()))
    bound = math.sqrt(6 / 168)
    assert np.abs(a.weights[0]).max() <= bound
    assert np.all(a.biases[0] == 0)
