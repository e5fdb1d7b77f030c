import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seismo import network as nw
from seismo import optimizer as opt
from seismo.dataset import SequenceData
from seismo.errors import Diverged, InvalidConfig, LengthMismatch, ShapeMismatch
from seismo.network import ModelArch


def toy_data(n=6, T=12, seed=0):
    rng = np.random.default_rng(seed)
    gm = rng.uniform(-1, 1, (n, T))
    struct = rng.uniform(-1, 1, (n, 2))
    # a causal smoothing of the input scaled by the structure channel
    target = np.cumsum(gm, axis=1) * 0.1 * (1 + 0.5 * struct[:, :1])
    return SequenceData(gm, struct, target)


def small_model(seed=0, hidden=6):
    return nw.init_params(ModelArch(num_layers=1, hidden_size=hidden), seed)


# -- loss -------------------------------------------------------------------


def test_mse_loss_examples():
    loss, g = opt.mse_loss([1.0, 2.0], [1.0, 2.0])
    assert loss == 0.0 and np.all(g == 0.0)
    loss, g = opt.mse_loss([1.0, 1.0], [0.0, 0.0])
    assert loss == 1.0
    np.testing.assert_array_equal(g, [1.0, 1.0])


def test_mse_loss_length_mismatch():
    with pytest.raises(LengthMismatch):
        opt.mse_loss([1.0, 2.0], [1.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 20))
def test_mse_gradient_finite_difference(seed, n):
    rng = np.random.default_rng(seed)
    p, t = rng.normal(size=n), rng.normal(size=n)
    _, g = opt.mse_loss(p, t)
    eps = 1e-6
    for j in range(n):
        e = np.zeros(n)
        e[j] = eps
        num = (opt.mse_loss(p + e, t)[0] - opt.mse_loss(p - e, t)[0]) / (2 * eps)
        # the loss is quadratic so central differences are exact up to roundoff
        assert abs(num - g[j]) <= 1e-9 * max(1.0, abs(g[j]))


# -- Adam -------------------------------------------------------------------


def test_adam_zero_gradient_first_step():
    params = {"w": np.array([1.0, -2.0])}
    state = opt.AdamState.zeros_like(params)
    opt.adam_step(params, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])
    assert state.t == 1


def test_adam_first_step_is_sign():
    params = {"w": np.array([0.5, 0.5, 0.5])}
    g = np.array([3.0, -0.01, 200.0])
    state = opt.AdamState.zeros_like(params, lr=0.01)
    opt.adam_step(params, {"w": g}, state)
    np.testing.assert_allclose(params["w"] - 0.5, -0.01 * np.sign(g), rtol=1e-5)


def test_adam_two_steps_on_quadratic():
    # L = theta^2 from theta = 1 with lr = 0.1; hand iteration:
    # step 1: g=2, m=0.2, v=0.004 -> update 0.1 -> theta 0.9
    # step 2: g=1.8, m=0.36, v=0.007236, m_hat=1.894737, v_hat=3.619810
    #         -> update 0.1 * 1.894737 / 1.902580 = 0.0995878 -> theta 0.8004122
    params = {"t": np.array([1.0])}
    state = opt.AdamState.zeros_like(params, lr=0.1)
    losses = [1.0]
    for _ in range(2):
        opt.adam_step(params, {"t": 2 * params["t"]}, state)
        losses.append(float(params["t"][0] ** 2))
    assert params["t"][0] == pytest.approx(0.8004122, abs=1e-7)
    assert losses[2] < losses[1] < losses[0]


def test_adam_shape_and_name_checks():
    params = {"w": np.zeros(2)}
    state = opt.AdamState.zeros_like(params)
    with pytest.raises(ShapeMismatch):
        opt.adam_step(params, {"w": np.zeros(3)}, state)
    with pytest.raises(ShapeMismatch):
        opt.adam_step(params, {"u": np.zeros(2)}, state)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
def test_adam_update_independent_of_magnitude(seed, offset):
    # same gradients from two different parameter values give the same step
    rng = np.random.default_rng(seed)
    grads = [rng.normal(size=4) for _ in range(3)]
    a = {"w": np.zeros(4)}
    b = {"w": np.full(4, offset)}
    sa = opt.AdamState.zeros_like(a)
    sb = opt.AdamState.zeros_like(b)
    for g in grads:
        opt.adam_step(a, {"w": g.copy()}, sa)
        opt.adam_step(b, {"w": g.copy()}, sb)
    np.testing.assert_allclose(b["w"] - offset, a["w"], rtol=1e-6, atol=1e-9 * offset)
    assert np.all(sa.v["w"] >= 0) and sa.t == 3


def test_clip_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    norm = opt.clip_global_norm(g, 1.0)
    assert norm == 5.0
    assert math.hypot(g["a"][0], g["b"][0]) == pytest.approx(1.0)
    h = {"a": np.array([0.3])}
    opt.clip_global_norm(h, 5.0)
    assert h["a"][0] == 0.3
    opt.clip_global_norm(h, None)
    assert h["a"][0] == 0.3


def test_lr_linear_parameter_change():
    # without clipping and as lr -> 0, a training step moves params linearly in lr
    data = toy_data(n=4)
    deltas = []
    for lr in (1e-6, 2e-6, 4e-6):
        m = small_model(1)
        before = {k: v.copy() for k, v in m.parameters().items()}
        cfg = opt.TrainConfig(batch_size=4, max_epochs=1, lr=lr, grad_clip=None, seed=0)
        m, _ = opt.train(m, data, data, cfg)
        deltas.append(math.sqrt(sum(float(np.sum((m.parameters()[k] - before[k]) ** 2)) for k in before)))
    assert deltas[1] / deltas[0] == pytest.approx(2.0, rel=1e-6)
    assert deltas[2] / deltas[1] == pytest.approx(2.0, rel=1e-6)


# -- training loop -----------------------------------------------------------


def test_train_config_validation():
    with pytest.raises(InvalidConfig):
        opt.TrainConfig(batch_size=0)
    with pytest.raises(InvalidConfig):
        opt.TrainConfig(patience=0)
    with pytest.raises(InvalidConfig):
        opt.TrainConfig(lr=0.0)


def test_zero_epochs_leaves_model():
    m = small_model()
    before = {k: v.copy() for k, v in m.parameters().items()}
    m, hist = opt.train(m, toy_data(), toy_data(seed=1), opt.TrainConfig(max_epochs=0))
    assert hist.epochs == [] and hist.best_epoch is None
    assert all(np.array_equal(before[k], v) for k, v in m.parameters().items())


def test_memorize_single_sample():
    one = toy_data(n=1, T=10).subset([0])
    m = small_model(2, hidden=8)
    initial = opt.evaluate_loss(m, one)
    cfg = opt.TrainConfig(batch_size=1, max_epochs=500, lr=1e-2, patience=500, seed=0)
    m, hist = opt.train(m, one, None, cfg)
    assert min(hist.train_mse) < 1e-4 * initial
    assert opt.evaluate_loss(m, one) < 1e-4 * initial


def test_training_deterministic():
    runs = []
    for _ in range(2):
        m = small_model(3)
        m, hist = opt.train(m, toy_data(), toy_data(seed=1), opt.TrainConfig(batch_size=2, max_epochs=4, lr=5e-3))
        runs.append((hist, m.parameters()))
    (h1, p1), (h2, p2) = runs
    assert h1.train_mse == h2.train_mse and h1.val_mse == h2.val_mse
    assert all(p1[k].tobytes() == p2[k].tobytes() for k in p1)


def test_restores_best_validation_checkpoint():
    # an aggressive lr makes validation loss wander so the best epoch is not the last
    train, val = toy_data(n=6, seed=0), toy_data(n=6, seed=9)
    m = small_model(4)
    cfg = opt.TrainConfig(batch_size=1, max_epochs=12, lr=0.2, patience=100, grad_clip=None, seed=1)
    m, hist = opt.train(m, train, val, cfg)
    best = int(np.argmin(hist.val_mse)) + 1
    assert hist.best_epoch == best
    assert opt.evaluate_loss(m, val) == pytest.approx(min(hist.val_mse), rel=1e-12)


def test_early_stopping():
    train, val = toy_data(seed=0), toy_data(seed=5)
    m = small_model(5)
    cfg = opt.TrainConfig(batch_size=6, max_epochs=200, lr=0.5, patience=3, grad_clip=None)
    m, hist = opt.train(m, train, val, cfg)
    if hist.stopped_early:
        assert len(hist.epochs) == hist.best_epoch + 3
    else:
        assert len(hist.epochs) == 200


def test_diverged(monkeypatch):
    data = toy_data()
    data.target[0, 0] = np.inf
    with pytest.raises(Diverged) as exc:
        opt.train(small_model(), data, None, opt.TrainConfig(max_epochs=2))
    assert exc.value.epoch == 1


def test_history_csv(tmp_path):
    h = opt.History(epochs=[1, 2], train_mse=[0.5, 0.25], val_mse=[0.75, 0.5], best_epoch=2)
    p = tmp_path / "h.csv"
    h.to_csv(p)
    assert p.read_text().splitlines() == ["epoch,train_mse,val_mse", "1,0.5,0.75", "2,0.25,0.5"]
