import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chf_hybrid.bnn import (HALF_LOG_2PI, BnnModel, bnn_config, bnn_init, bnn_predict, bnn_train,
                            convergence_study, elbo_loss, inverse_softplus, kl_gaussian,
                            posterior_samples, softplus)
from chf_hybrid.errors import ConfigError, SizeError
from chf_hybrid.nncore import MlpConfig, TrainConfig
from conftest import central_difference, relative_error


def _linear(n=200, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    return x, x @ np.array([0.8, -0.5, 0.3])


def test_kl_reference_values():
    assert kl_gaussian(0.0, 1.0) == 0.0
    assert kl_gaussian(1.0, 1.0) == 0.5
    assert kl_gaussian([1.0, 0.0], [1.0, 1.0]) == 0.5
    with pytest.raises(ValueError):
        kl_gaussian(0.0, 0.0)


@settings(max_examples=300, deadline=None)
@given(st.floats(-5, 5), st.floats(0.01, 5), st.floats(-5, 5), st.floats(0.01, 5))
def test_kl_is_non_negative(mq, sq, mp, sp):
    assert kl_gaussian(mq, sq, mp, sp) >= -1e-12


def test_kl_non_negative_on_many_random_draws():
    rng = np.random.default_rng(0)
    mq, mp = rng.normal(size=(2, 10_000))
    sq, sp = rng.uniform(0.01, 3.0, size=(2, 10_000))
    vals = np.log(sp / sq) + (sq**2 + (mq - mp) ** 2) / (2 * sp**2) - 0.5
    assert vals.min() >= -1e-12
    assert kl_gaussian(mq, sq, mp, sp) == pytest.approx(vals.sum())


def test_softplus_inverse():
    y = np.array([1e-4, 0.05, 1.0, 30.0])
    np.testing.assert_allclose(softplus(inverse_softplus(y)), y, rtol=1e-12)


def test_nll_at_zero_residual_with_unit_scale():
    model = bnn_init(bnn_config(3, (4,)), freeze_scale=True)
    model.mu[:] = 0.0
    model.rho[:] = -40.0
    x = np.random.default_rng(0).normal(size=(5, 3))
    _, nll, _, _, _ = elbo_loss(model, x, np.zeros(5), 5, eps=np.zeros_like(model.mu))
    assert nll == pytest.approx(HALF_LOG_2PI, abs=1e-12)


def test_doubling_n_total_halves_kl():
    model = bnn_init(bnn_config(3, (4,)))
    x, y = _linear(8)
    eps = np.zeros_like(model.mu)
    a = elbo_loss(model, x, y, 100, eps=eps)[2]
    b = elbo_loss(model, x, y, 200, eps=eps)[2]
    assert b == pytest.approx(a / 2, rel=1e-12)


@pytest.mark.parametrize("freeze_scale", [False, True])
def test_elbo_gradient_with_frozen_noise(freeze_scale):
    model = bnn_init(bnn_config(3, (5, 4), "swish", seed=2), freeze_scale=freeze_scale)
    rng = np.random.default_rng(1)
    model.mu += rng.normal(0, 0.3, model.mu.shape)
    x, y = _linear(9, seed=3)
    eps = rng.standard_normal(model.mu.shape)
    _, _, _, g_mu, g_rho = elbo_loss(model, x, y, 50, eps=eps)

    def f():
        return elbo_loss(model, x, y, 50, eps=eps)[0]

    assert relative_error(g_mu, central_difference(f, model.mu)) < 1e-3
    assert relative_error(g_rho, central_difference(f, model.rho)) < 1e-3


def test_head_must_have_two_outputs():
    with pytest.raises(ConfigError):
        BnnModel(MlpConfig((4,), input_dim=3, output_dim=1), np.zeros(21), np.zeros(21))


def test_zero_epochs_leave_model_unchanged():
    model = bnn_init(bnn_config(3, (8,)))
    x, y = _linear(20)
    trained = bnn_train(model, x, y, TrainConfig(epochs=0))
    np.testing.assert_array_equal(trained.mu, model.mu)
    np.testing.assert_array_equal(trained.rho, model.rho)


def test_training_is_reproducible(tmp_path):
    x, y = _linear(60)
    model = bnn_init(bnn_config(3, (8,), seed=4))
    tc = TrainConfig(epochs=5, lr0=1e-2, batch_size=16, seed=9)
    a = bnn_train(model, x, y, tc, x[:10], y[:10])
    b = bnn_train(model, x, y, tc, x[:10], y[:10])
    np.testing.assert_allclose(a.mu, b.mu, rtol=1e-12, atol=0)
    np.testing.assert_allclose(a.rho, b.rho, rtol=1e-12, atol=0)
    assert len(a.history.loss) == 5 and np.isfinite(a.history.val_loss).all()
    a.history.to_csv(tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().startswith("epoch,train_loss,val_loss,lr,nll,kl\n")


def test_not_overconfident_on_noiseless_linear_data():
    x, y = _linear(300)
    model = bnn_init(bnn_config(3, (32, 32), seed=1))
    model = bnn_train(model, x, y, TrainConfig(epochs=150, lr0=1e-2, decay_epochs=20, batch_size=32))
    xt, yt = _linear(100, seed=5)
    pred = bnn_predict(model, xt, 200, seed=1)
    rmse = math.sqrt(np.mean((pred.mean - yt) ** 2))
    assert rmse < np.mean(pred.std)
    assert rmse < 0.3 * np.std(yt)


def test_collapsed_posterior_spread_is_the_scale_floor():
    model = bnn_init(bnn_config(3, (4,)))
    model.rho[:] = -800.0  # softplus underflows to zero
    last = slice(model.mu.size - 2, model.mu.size)
    model.mu[:] = 0.0
    model.mu[last] = [1.0, -50.0]  # head biases: mean 1, raw scale -> floor
    x = np.random.default_rng(0).normal(size=(6, 3))
    samples = posterior_samples(model, x, 500, seed=3)
    no_noise = posterior_samples(model, x, 20, seed=3, include_noise=False)
    np.testing.assert_array_equal(no_noise, 1.0)
    np.testing.assert_allclose(samples.std(axis=1), model.scale_floor, rtol=0.15)


def test_sample_draws_are_nested_and_seeded():
    model = bnn_init(bnn_config(3, (4,)))
    x = np.random.default_rng(0).normal(size=(4, 3))
    big = posterior_samples(model, x, 120, seed=7)
    np.testing.assert_array_equal(posterior_samples(model, x, 30, seed=7), big[:, :30])
    assert not np.array_equal(posterior_samples(model, x, 30, seed=8), big[:, :30])
    with pytest.raises(SizeError):
        bnn_predict(model, x, 1)


def test_mean_estimate_within_standard_error():
    model = bnn_init(bnn_config(3, (8,)), init_std=0.5)
    x = np.random.default_rng(2).normal(size=(200, 3))
    a = bnn_predict(model, x, 200, seed=1)
    b = bnn_predict(model, x, 200, seed=2)
    pooled = np.sqrt(0.5 * (a.std**2 + b.std**2))
    diff = a.mean - b.mean
    assert np.std(diff) < 3 * np.mean(pooled) / math.sqrt(200)


def test_predictive_std_positive_and_save_load(tmp_path):
    model = bnn_init(bnn_config(3, (4,)), base="biasi")
    x = np.random.default_rng(0).normal(size=(5, 3))
    pred = bnn_predict(model, x, 50)
    assert np.all(pred.std >= model.scale_floor * 0.5)
    model.save(tmp_path / "m")
    back = BnnModel.load(tmp_path / "m")
    assert back.base == "biasi"
    np.testing.assert_array_equal(bnn_predict(back, x, 50).mean, pred.mean)


def test_convergence_study_layout():
    model = bnn_init(bnn_config(3, (8,)), init_std=0.3)
    x = np.random.default_rng(0).normal(size=(30, 3)) + 5.0
    study = convergence_study(model, x, sizes=(400, 10, 200))
    assert study.sizes == (10, 200, 400)
    rows = study.rows()
    assert math.isnan(rows[0]["mean_shift_pct"]) and rows[2]["n_samples"] == 400
    assert study.shift_pct(200, 400) == rows[2]["mean_shift_pct"]
