import numpy as np
import pytest

from chf_hybrid.dataset import FEATURES, StandardScaler
from chf_hybrid.ensemble import (EnsembleModel, member_outputs, member_seeds, predict_ensemble,
                                 train_ensemble)
from chf_hybrid.errors import ConfigError, EnsembleError, SizeError
from chf_hybrid.nncore import MlpConfig, TrainConfig, mlp_init

IDENTITY = StandardScaler(FEATURES, np.zeros(5), np.ones(5), 0.0, 1.0)


def _constant_members(values, scaler=IDENTITY):
    """An ensemble whose member k outputs values[k] everywhere."""
    params = mlp_init(MlpConfig((3,), input_dim=5), seeds=list(range(len(values))))
    params.flat[:] = 0.0
    params.biases[-1][:, 0] = values
    return EnsembleModel(params, scaler)


def _data(n=120, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 5))
    return x, np.tanh(x[:, 0]) + 0.3 * x[:, 1]


def test_two_member_statistics():
    pred = predict_ensemble(_constant_members([1.0, 3.0]), np.zeros((4, 5)))
    np.testing.assert_array_equal(pred.mean, 2.0)
    np.testing.assert_array_equal(pred.std, 1.0)  # population convention
    np.testing.assert_allclose(pred.rstd, 50.0)


def test_identical_members_have_zero_spread():
    pred = predict_ensemble(_constant_members([2.0, 2.0, 2.0]), np.zeros((3, 5)))
    assert np.all(pred.std == 0.0)


def test_outputs_are_destandardized():
    scaler = StandardScaler(FEATURES, np.zeros(5), np.ones(5), 1000.0, 50.0)
    pred = predict_ensemble(_constant_members([-1.0, 1.0], scaler), np.zeros((2, 5)))
    np.testing.assert_allclose(pred.mean, 1000.0)
    np.testing.assert_allclose(pred.std, 50.0)


def test_feature_width_mismatch():
    with pytest.raises(ConfigError):
        member_outputs(_constant_members([1.0, 2.0]), np.zeros((2, 4)))


def test_member_seed_rules():
    assert member_seeds(10, 3) == [10, 11, 12]
    x, y = _data()
    cfg, tc = MlpConfig((4,), input_dim=5), TrainConfig(epochs=1)
    with pytest.raises(ConfigError):
        train_ensemble(cfg, tc, x, y, IDENTITY, seeds=[1, 1])
    with pytest.raises(SizeError):
        train_ensemble(cfg, tc, x, y, IDENTITY, n_members=1)


def test_stacked_equals_serial():
    x, y = _data()
    cfg, tc = MlpConfig((16, 16), "swish", input_dim=5), TrainConfig(epochs=4, batch_size=16)
    a = train_ensemble(cfg, tc, x, y, IDENTITY, base_seed=3, n_members=4, mode="stacked")
    b = train_ensemble(cfg, tc, x, y, IDENTITY, base_seed=3, n_members=4, mode="serial")
    np.testing.assert_array_equal(a.params.flat, b.params.flat)
    np.testing.assert_array_equal(a.history.train_loss, b.history.train_loss)


def test_distinct_seeds_give_spread():
    x, y = _data()
    model = train_ensemble(MlpConfig((16, 16), input_dim=5), TrainConfig(epochs=5, batch_size=16),
                           x, y, IDENTITY, n_members=5)
    assert model.member_seeds == [0, 1, 2, 3, 4]
    pred = predict_ensemble(model, _data(50, seed=1)[0])
    assert np.all(pred.std > 0)
    assert pred.samples.shape == (50, 5)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverged_members_are_named():
    x, y = _data(20)
    with pytest.raises(EnsembleError) as info:
        train_ensemble(MlpConfig((4,), "relu", input_dim=5), TrainConfig(epochs=2, lr0=1.0),
                       x, y * 1e200, IDENTITY, n_members=2)
    assert info.value.failed_members == [0, 1]


def test_save_load(tmp_path):
    model = _constant_members([1.0, 3.0])
    model.base = "biasi"
    model.save(tmp_path / "ens")
    back = EnsembleModel.load(tmp_path / "ens")
    assert back.base == "biasi" and back.member_seeds == [0, 1]
    x = np.random.default_rng(0).normal(size=(3, 5))
    np.testing.assert_array_equal(predict_ensemble(back, x).mean, predict_ensemble(model, x).mean)
