import math

import numpy as np
import pytest

from chf_hybrid.errors import ConfigError, DivergenceError, ShapeError, SizeError
from chf_hybrid.nncore import (ACTIVATIONS, Adam, MlpConfig, MlpParams, TrainConfig, forward,
                               loss_and_grad, mlp_init, mse_loss, n_params, train, tune)
from conftest import central_difference, relative_error


def _toy(n=40, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    y = np.sin(x[:, :1]) + 0.5 * x[:, 1:2] * x[:, 2:3]
    return x, y


@pytest.mark.parametrize("activation", ACTIVATIONS)
def test_gradient_matches_finite_differences(activation):
    cfg = MlpConfig((6, 5), activation, input_dim=3, output_dim=2, seed=1)
    params = mlp_init(cfg)
    rng = np.random.default_rng(2)
    params.flat[0] += rng.normal(0.0, 0.1, params.flat.shape[1])  # non-zero biases
    x, y = rng.normal(size=(7, 3)), rng.normal(size=(7, 2))
    _, grad = loss_and_grad(params, x, y)
    numeric = central_difference(lambda: loss_and_grad(params, x, y)[0][0], params.flat[0])
    assert relative_error(grad[0], numeric) < 1e-4


def test_stacked_gradients_are_per_member():
    cfg = MlpConfig((4,), "tanh", input_dim=3, seed=0)
    stack = mlp_init(cfg, seeds=[3, 4])
    x, y = _toy(10)
    loss, grad = loss_and_grad(stack, x, y)
    for k in range(2):
        lk, gk = loss_and_grad(stack.member(k), x, y)
        assert loss[k] == pytest.approx(lk[0], rel=1e-12)
        np.testing.assert_allclose(grad[k], gk[0], rtol=1e-10, atol=1e-14)


def test_init_is_seeded_glorot():
    cfg = MlpConfig((32,), input_dim=5, seed=7)
    a, b, c = mlp_init(cfg), mlp_init(cfg), mlp_init(MlpConfig((32,), input_dim=5, seed=8))
    np.testing.assert_array_equal(a.flat, b.flat)
    assert not np.array_equal(a.flat, c.flat)
    w0 = a.weights[0][0]
    assert np.max(np.abs(w0)) <= math.sqrt(6.0 / (5 + 32))
    assert np.all(a.biases[0] == 0)
    assert a.flat.shape == (1, n_params(cfg.layer_sizes))


def test_config_validation():
    with pytest.raises(ConfigError):
        MlpConfig((4,), "gelu")
    with pytest.raises(ConfigError):
        MlpConfig((0,))
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


def test_mse_loss_values():
    loss, grad = mse_loss(np.array([[1.0], [3.0]]), np.array([[0.0], [1.0]]))
    assert loss == 2.5
    np.testing.assert_allclose(grad, [[1.0], [2.0]])
    with pytest.raises(SizeError):
        mse_loss(np.zeros((0, 1)), np.zeros((0, 1)))
    with pytest.raises(ShapeError):
        mse_loss(np.zeros((2, 1)), np.zeros((3, 1)))


def test_forward_shape_errors():
    params = mlp_init(MlpConfig((4,), input_dim=3))
    assert forward(params, np.zeros((5, 3))).shape == (5, 1)
    with pytest.raises(ShapeError):
        forward(params, np.zeros((5, 4)))


def test_learning_rate_schedule():
    tc = TrainConfig(lr0=0.01, decay_rate=0.5, decay_epochs=4)
    assert tc.lr_at(0) == 0.01
    assert tc.lr_at(4) == pytest.approx(0.005)
    assert tc.lr_at(2) == pytest.approx(0.01 * 0.5**0.5)


def test_adam_first_step_is_lr_times_sign():
    theta = np.array([[1.0, -2.0, 3.0]])
    Adam(theta.shape).step(theta, np.array([[0.5, -4.0, 0.0]]), lr=0.1)
    np.testing.assert_allclose(theta, [[0.9, -1.9, 3.0]], atol=1e-6)


def test_zero_learning_rate_leaves_parameters():
    x, y = _toy()
    params = mlp_init(MlpConfig((8,), input_dim=3, seed=2))
    trained, hist = train(params, x, y, TrainConfig(epochs=3, lr0=0.0))
    np.testing.assert_array_equal(trained.flat, params.flat)
    assert hist.train_loss.shape == (1, 3)


def test_zero_epochs():
    x, y = _toy()
    params = mlp_init(MlpConfig((8,), input_dim=3))
    trained, hist = train(params, x, y, TrainConfig(epochs=0))
    np.testing.assert_array_equal(trained.flat, params.flat)
    assert hist.lr.size == 0


def test_memorizes_a_single_point():
    params = mlp_init(MlpConfig((16, 16), "tanh", input_dim=3, seed=0))
    x, y = np.array([[0.3, -0.2, 0.9]]), np.array([[1.7]])
    trained, hist = train(params, x, y, TrainConfig(epochs=500, lr0=1e-2))
    assert hist.train_loss[0, -1] < 1e-4


def test_loss_decreases_and_history_csv(tmp_path):
    x, y = _toy(200)
    params = mlp_init(MlpConfig((32, 32), input_dim=3))
    _, hist = train(params, x, y, TrainConfig(epochs=40, lr0=5e-3, batch_size=32), x[:20], y[:20])
    assert hist.train_loss[0, -1] < 0.3 * hist.train_loss[0, 0]
    assert np.all(np.isfinite(hist.val_loss))
    hist.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,lr" and len(lines) == 41


def test_full_batch_is_order_invariant():
    x, y = _toy(30)
    params = mlp_init(MlpConfig((8,), input_dim=3))
    tc = TrainConfig(epochs=5, batch_size=30)
    a, _ = train(params, x, y, tc, shuffle_seeds=[1])
    b, _ = train(params, x, y, tc, shuffle_seeds=[2])
    np.testing.assert_allclose(a.flat, b.flat, rtol=1e-10, atol=1e-13)


def test_training_is_reproducible():
    x, y = _toy(50)
    params = mlp_init(MlpConfig((8,), input_dim=3))
    tc = TrainConfig(epochs=5, batch_size=8, seed=4)
    a, _ = train(params, x, y, tc)
    b, _ = train(params, x, y, tc)
    np.testing.assert_array_equal(a.flat, b.flat)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    x, y = _toy(20)
    params = mlp_init(MlpConfig((8,), "relu", input_dim=3))
    with pytest.raises(DivergenceError) as info:
        train(params, x, y * 1e200, TrainConfig(epochs=3, lr0=1.0))
    assert info.value.epoch == 0 and info.value.members == [0]


def test_params_save_load(tmp_path):
    params = mlp_init(MlpConfig((5, 4), "sigmoid", input_dim=3), seeds=[1, 2])
    params.save(tmp_path / "p.npz", note="x")
    back = MlpParams.load(tmp_path / "p.npz")
    np.testing.assert_array_equal(back.flat, params.flat)
    assert back.config == params.config and list(back.seeds) == [1, 2]


def test_successive_halving():
    x, y = _toy(120)
    space = {"depth": [1, 2], "width": [8, 16], "activation": ["tanh", "relu"],
             "lr0": (1e-3, 1e-2), "batch_size": [32]}
    res = tune(space, budget=8, rungs=2, x_train=x[:100], y_train=y[:100], x_val=x[100:],
               y_val=y[100:], min_epochs=2, seed=3)
    assert res.rung_sizes == [8, 4, 2]
    assert res.rung_epochs == [2, 4, 8]
    assert math.isfinite(res.val_loss)
    again = tune(space, 8, 2, x[:100], y[:100], x[100:], y[100:], min_epochs=2, seed=3)
    assert again.mlp == res.mlp and again.val_loss == res.val_loss


def test_tune_configuration_errors():
    x, y = _toy(20)
    with pytest.raises(ConfigError):
        tune({"width": [8]}, budget=3, rungs=2, x_train=x, y_train=y, x_val=x, y_val=y)
    with pytest.raises(ConfigError):
        tune({"width": []}, budget=4, rungs=1, x_train=x, y_train=y, x_val=x, y_val=y)
