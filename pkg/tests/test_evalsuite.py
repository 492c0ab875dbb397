import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import ndtri

from chf_hybrid.errors import DegenerateUncertaintyError, ShapeError, SizeError
from chf_hybrid.evalsuite import (calibration_curve, metrics, parity_export, point_metrics,
                                  read_parity_csv, rstd_distribution, silverman_bandwidth,
                                  write_metrics_json, write_plot_data)
from chf_hybrid.predictions import PredictionSet, read_predictions_csv


def _exact_quantile_set(n=2000):
    """Targets placed at the normal quantiles of their own predictive distributions."""
    rng = np.random.default_rng(0)
    mean = rng.uniform(1000, 3000, n)
    std = rng.uniform(20, 200, n)
    z = ndtri((np.arange(n) + 0.5) / n)
    rng.shuffle(z)
    return mean + std * z, mean, std


def test_ten_percent_high():
    y = np.random.default_rng(3).uniform(100.0, 5000.0, 1000)
    m = point_metrics(y, 1.1 * y)
    assert m.mu_error == 10.0 and m.rrmse == 10.0 and m.max_error == 10.0
    assert m.f_gt10 == 0.0


def test_r2_reference_points():
    y = np.array([1.0, 2.0, 4.0, 8.0])
    assert point_metrics(y, y).r2 == 1.0
    assert point_metrics(y, np.full(4, y.mean())).r2 == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-0.9, 3.0), min_size=2, max_size=50))
def test_rrmse_bounds_mu_error(errors):
    y = np.full(len(errors), 100.0)
    m = point_metrics(y, y * (1 + np.array(errors)))
    assert m.rrmse >= m.mu_error - 1e-9
    assert m.max_error >= m.mu_error - 1e-9


def test_uncertainty_metrics():
    pred = PredictionSet.from_samples([[1.0, 3.0], [10.0, 10.0]])
    m = metrics([2.0, 10.0], pred)
    assert m.mu_error == 0.0
    assert m.mean_rstd == pytest.approx(25.0) and m.max_rstd == pytest.approx(50.0)


def test_metric_input_errors():
    with pytest.raises(SizeError):
        point_metrics([1.0, 2.0], [1.0])
    with pytest.raises(SizeError):
        point_metrics([1.0], [1.0])
    with pytest.raises(ZeroDivisionError):
        point_metrics([0.0, 1.0], [1.0, 1.0])


def test_exact_quantiles_are_calibrated():
    y, mean, std = _exact_quantile_set()
    curve = calibration_curve(y, PredictionSet(mean, std))
    assert curve.expected_p.size == 100
    assert curve.miscalibration_area < 0.02


def test_inflated_and_deflated_sigma():
    y, mean, std = _exact_quantile_set()
    wide = calibration_curve(y, PredictionSet(mean, 2.0 * std))
    narrow = calibration_curve(y, PredictionSet(mean, 0.5 * std))
    at = np.searchsorted(wide.expected_p, 0.75)
    assert wide.observed_p[at] > wide.expected_p[at]  # underconfident
    assert narrow.observed_p[at] < narrow.expected_p[at]  # overconfident
    assert wide.miscalibration_area > 0.05 and narrow.miscalibration_area > 0.05


def test_zero_std_is_rejected():
    with pytest.raises(DegenerateUncertaintyError):
        calibration_curve([1.0, 2.0], PredictionSet([1.0, 2.0], [0.1, 0.0]))


def test_prediction_set_shapes_and_shift():
    with pytest.raises(ShapeError):
        PredictionSet([1.0, 2.0], [1.0])
    pred = PredictionSet.from_samples(np.arange(12.0).reshape(3, 4))
    moved = pred.shifted([100.0, 0.0, -5.0])
    np.testing.assert_allclose(moved.mean, pred.mean + [100.0, 0.0, -5.0])
    np.testing.assert_allclose(moved.std, pred.std)
    assert len(pred[1:]) == 2


def test_rstd_distribution():
    rng = np.random.default_rng(1)
    values = np.concatenate([rng.normal(5.0, 1.0, 500).clip(0.1), [200.0]])
    dist = rstd_distribution(values)
    assert dist.counts.sum() == values.size
    assert dist.bin_edges[0] == 0.0 and dist.bin_edges[-1] == 200.0
    trimmed = rstd_distribution(values, drop_outliers=True)
    assert trimmed.n_outliers >= 1 and trimmed.bin_edges[-1] < 200.0
    dx = trimmed.kde_x[1] - trimmed.kde_x[0]
    assert trimmed.kde_y.sum() * dx == pytest.approx(1.0, abs=0.02)
    assert silverman_bandwidth(values) > 0
    assert silverman_bandwidth(np.ones(5)) > 0


def test_parity_table_round_trip(tmp_path):
    y = np.array([1000.0, 2000.0, 3000.0])
    pred = PredictionSet([1050.0, 2500.0, 2990.0], [10.0, 20.0, 30.0])
    table = parity_export(y, pred, point_ids=[7, 8, 9], pressures=[7.0, 1.0, 7.1])
    assert table.inside_band.tolist() == [True, False, True]
    table.to_csv(tmp_path / "p.csv", tmp_path / "l.csv")
    back = read_parity_csv(tmp_path / "p.csv")
    np.testing.assert_array_equal(back.point_id, [7, 8, 9])
    np.testing.assert_allclose(back.band_hi, table.band_hi)
    assert len(back.subset(back.pressure > 5)) == 2


def test_file_outputs(tmp_path):
    y, mean, std = _exact_quantile_set(200)
    pred = PredictionSet(mean, std)
    write_metrics_json(metrics(y, pred), tmp_path / "m.json", {"method": "x"})
    write_plot_data(tmp_path, calibration_curve(y, pred), rstd_distribution(pred), parity_export(y, pred))
    for name in ("calibration.csv", "rstd_hist.csv", "rstd_kde.csv", "parity.csv", "parity_lines.csv"):
        assert (tmp_path / name).stat().st_size > 0
    pred.to_csv(tmp_path / "pred.csv", y)
    back = read_predictions_csv(tmp_path / "pred.csv")
    assert back is not None


def test_svg_rendering(tmp_path):
    pytest.importorskip("matplotlib")
    y, mean, std = _exact_quantile_set(100)
    pred = PredictionSet(mean, std)
    write_plot_data(tmp_path, calibration_curve(y, pred), rstd_distribution(pred),
                    parity_export(y, pred), svg=True)
    assert sorted(p.name for p in tmp_path.glob("*.svg"))
