"""Accuracy metrics, uncertainty calibration, rStd distributions, parity data.

Relative errors are ``e_i = (pred_i - y_i) / y_i``. ``rrmse`` follows the
OECD/NEA benchmark definition ``sqrt(mean(e_i**2)) * 100``. ``f_gt10`` counts
``|e_i| > 10%`` strictly, and the parity band flags ``|e_i| <= 10%`` as
inside, so the fraction outside the band always equals ``f_gt10``.

Relative errors are snapped to 12 decimals and reported metrics to 12
significant digits, so representation error in inputs such as ``1.1 * y``
cannot push a point across the band edge or perturb exact identities.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import ndtri

from .errors import DegenerateUncertaintyError, SizeError
from .predictions import RSTD_CONVENTION, PredictionSet

log = logging.getLogger(__name__)

__all__ = [
    "MetricsReport",
    "metrics",
    "point_metrics",
    "CalibrationCurve",
    "calibration_curve",
    "RstdDistribution",
    "rstd_distribution",
    "silverman_bandwidth",
    "ParityTable",
    "parity_export",
    "write_plot_data",
]


@dataclass(frozen=True)
class MetricsReport:
    mu_error: float
    max_error: float
    mean_rstd: Optional[float]
    max_rstd: Optional[float]
    rrmse: float
    f_gt10: float
    r2: float

    def to_dict(self):
        return asdict(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def _relative_errors(y_true, y_pred):
    y = np.asarray(y_true, dtype=float)
    p = np.asarray(y_pred, dtype=float)
    if y.shape != p.shape:
        raise SizeError(f"y_true and predictions differ in length: {y.shape} vs {p.shape}")
    if y.size < 2:
        raise SizeError("metrics need at least two points")
    zero = np.flatnonzero(y == 0)
    if zero.size:
        raise ZeroDivisionError(f"y_true is zero at indices {zero.tolist()}")
    if np.any(y < 0):
        raise ValueError("y_true must be positive")
    return y, p, _snap((p - y) / y)


def _snap(e):
    return np.round(e, 12)


def _sig(v) -> float:
    return float(f"{float(v):.12g}")


def point_metrics(y_true, y_pred) -> MetricsReport:
    """Metrics for point predictions; uncertainty fields are ``None``."""
    y, p, e = _relative_errors(y_true, y_pred)
    a = np.abs(e)
    ss_res = np.sum((p - y) ** 2)
    ss_tot = np.sum((y - y.mean()) ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = 1.0 - ss_res / ss_tot
    return MetricsReport(
        mu_error=_sig(a.mean() * 100.0),
        max_error=_sig(a.max() * 100.0),
        mean_rstd=None,
        max_rstd=None,
        rrmse=_sig(np.sqrt(np.mean(e**2)) * 100.0),
        f_gt10=_sig(100.0 * np.count_nonzero(a > 0.10) / a.size),
        r2=_sig(r2),
    )


def metrics(y_true, pred: PredictionSet) -> MetricsReport:
    """The seven comparison metrics for a set of predictive distributions."""
    base = point_metrics(y_true, pred.mean)
    rstd = pred.rstd
    return MetricsReport(
        mu_error=base.mu_error,
        max_error=base.max_error,
        mean_rstd=_sig(np.mean(rstd)),
        max_rstd=_sig(np.max(rstd)),
        rrmse=base.rrmse,
        f_gt10=base.f_gt10,
        r2=base.r2,
    )


# --------------------------------------------------------------------------
# Calibration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationCurve:
    expected_p: np.ndarray
    observed_p: np.ndarray
    miscalibration_area: float

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["expected_p", "observed_p"])
            for e, o in zip(self.expected_p, self.observed_p):
                w.writerow([repr(float(e)), repr(float(o))])


def calibration_curve(y_true, pred: PredictionSet, grid_size: int = 100) -> CalibrationCurve:
    """Observed vs. expected CDF of std-normalized residuals.

    Points above the identity on the right half mean the reported standard
    deviations are too large (underconfident); below means overconfident.
    """
    y = np.asarray(y_true, dtype=float)
    std = np.asarray(pred.std, dtype=float)
    bad = np.flatnonzero(~(std > 0))
    if bad.size:
        raise DegenerateUncertaintyError(f"non-positive std at indices {bad[:10].tolist()}")
    z = np.sort((y - pred.mean) / std)
    expected = np.linspace(0.0, 1.0, grid_size + 2)[1:-1]
    observed = np.searchsorted(z, ndtri(expected), side="right") / z.size
    area = float(np.trapezoid(np.abs(observed - expected), expected))
    return CalibrationCurve(expected, observed, area)


# --------------------------------------------------------------------------
# rStd distribution
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RstdDistribution:
    bin_edges: np.ndarray
    counts: np.ndarray
    kde_x: np.ndarray
    kde_y: np.ndarray
    bandwidth: float
    n_outliers: int

    def to_csvs(self, hist_path, kde_path):
        with open(hist_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo_pct", "bin_hi_pct", "count"])
            for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
                w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
        with open(kde_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rstd_pct", "density"])
            for x, d in zip(self.kde_x, self.kde_y):
                w.writerow([repr(float(x)), repr(float(d))])


def silverman_bandwidth(values) -> float:
    v = np.asarray(values, dtype=float)
    n = v.size
    sigma = v.std(ddof=1) if n > 1 else 0.0
    q75, q25 = np.percentile(v, [75, 25])
    spread = min(sigma, (q75 - q25) / 1.34) or sigma
    h = 0.9 * spread * n ** (-0.2)
    if h <= 0:
        h = 1e-3 * max(abs(float(v.mean())), 1.0)
    return float(h)


def rstd_distribution(pred, bins: int = 30, drop_outliers: bool = False,
                      kde_points: int = 256) -> RstdDistribution:
    """Equal-width histogram over [0, max rStd] plus a Gaussian KDE.

    ``pred`` may be a :class:`PredictionSet` or an array of rStd values in %.
    With ``drop_outliers`` values above Q3 + 1.5 IQR are excluded. Non-finite
    values are always excluded; ``n_outliers`` counts both.
    """
    r = np.asarray(pred.rstd if isinstance(pred, PredictionSet) else pred, dtype=float)
    finite = np.isfinite(r)
    n_out = int(np.count_nonzero(~finite))
    if n_out:
        log.warning("rstd_distribution: %d non-finite rStd value(s) (zero predicted mean) left out", n_out)
        r = r[finite]
    if r.size == 0:
        raise SizeError("rstd_distribution needs at least one finite value")
    if drop_outliers:
        q75, q25 = np.percentile(r, [75, 25])
        keep = r <= q75 + 1.5 * (q75 - q25)
        n_out += int(np.count_nonzero(~keep))
        r = r[keep]
    top = float(r.max()) if r.max() > 0 else 1.0
    counts, edges = np.histogram(r, bins=bins, range=(0.0, top))
    h = silverman_bandwidth(r)
    x = np.linspace(r.min() - 4 * h, r.max() + 4 * h, kde_points)
    u = (x[:, None] - r[None, :]) / h
    y = np.exp(-0.5 * u**2).sum(axis=1) / (r.size * h * np.sqrt(2 * np.pi))
    return RstdDistribution(edges, counts, x, y, h, n_out)


# --------------------------------------------------------------------------
# Parity
# --------------------------------------------------------------------------

PARITY_HEADER = ["point_id", "y_true_kw_m2", "y_pred_mean_kw_m2", "lo_2sigma", "hi_2sigma",
                 "inside_band", "rstd_pct", "p_mpa"]


@dataclass(frozen=True)
class ParityTable:
    point_id: np.ndarray
    y_true: np.ndarray
    mean: np.ndarray
    lo_2sigma: np.ndarray
    hi_2sigma: np.ndarray
    inside_band: np.ndarray
    rstd: np.ndarray
    pressure: np.ndarray
    line_x: np.ndarray
    identity: np.ndarray
    band_lo: np.ndarray
    band_hi: np.ndarray
    error_band_pct: float

    def __len__(self):
        return len(self.y_true)

    def subset(self, mask) -> "ParityTable":
        cols = {f.name: getattr(self, f.name) for f in fields(self)}
        for name in ("point_id", "y_true", "mean", "lo_2sigma", "hi_2sigma",
                     "inside_band", "rstd", "pressure"):
            cols[name] = cols[name][mask]
        return ParityTable(**cols)

    def to_csv(self, path, lines_path=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(PARITY_HEADER)
            for i in range(len(self)):
                w.writerow([int(self.point_id[i])]
                           + [repr(float(v[i])) for v in (self.y_true, self.mean,
                                                         self.lo_2sigma, self.hi_2sigma)]
                           + [int(self.inside_band[i]), repr(float(self.rstd[i])),
                              repr(float(self.pressure[i]))])
        if lines_path is not None:
            with open(lines_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["x_kw_m2", "identity", "band_lo", "band_hi"])
                for row in zip(self.line_x, self.identity, self.band_lo, self.band_hi):
                    w.writerow([repr(float(v)) for v in row])


def read_parity_csv(path, error_band_pct=10.0) -> ParityTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader) != PARITY_HEADER:
            raise ValueError(f"{path}: unexpected parity header")
        rows = [r for r in reader if r]
    a = np.array([[float(v) for v in r] for r in rows]).reshape(-1, len(PARITY_HEADER))
    return _parity_from_columns(a[:, 0].astype(int), a[:, 1], a[:, 2], a[:, 3], a[:, 4],
                                a[:, 5].astype(bool), a[:, 6], a[:, 7], error_band_pct)


def _parity_from_columns(ids, y, mean, lo, hi, inside, rstd, pressure, band):
    top = float(max(y.max(), mean.max())) if y.size else 1.0
    bottom = float(min(y.min(), mean.min())) if y.size else 0.0
    line_x = np.linspace(min(bottom, 0.0), top, 2)
    return ParityTable(ids, y, mean, lo, hi, inside, rstd, pressure, line_x, line_x.copy(),
                       line_x * (1 - band / 100), line_x * (1 + band / 100), band)


def parity_export(y_true, pred: PredictionSet, error_band_pct: float = 10.0,
                  point_ids=None, pressures=None) -> ParityTable:
    y = np.asarray(y_true, dtype=float)
    if y.size == 0:
        raise SizeError("parity_export needs at least one point")
    e = np.abs(_snap((pred.mean - y) / y))
    ids = np.arange(y.size) if point_ids is None else np.asarray(point_ids)
    p = np.full(y.size, np.nan) if pressures is None else np.asarray(pressures, dtype=float)
    return _parity_from_columns(ids, y, pred.mean, pred.lo_2sigma, pred.hi_2sigma,
                                e <= error_band_pct / 100.0, pred.rstd, p, error_band_pct)


# --------------------------------------------------------------------------
# File output
# --------------------------------------------------------------------------

def write_metrics_json(report: MetricsReport, path, extra=None):
    payload = report.to_dict()
    payload["rstd_convention"] = RSTD_CONVENTION
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_plot_data(out_dir, calibration=None, rstd=None, parity=None, svg=False):
    """Write the plot-data CSVs (and optional SVG renderings) into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if calibration is not None:
        calibration.to_csv(out / "calibration.csv")
    if rstd is not None:
        rstd.to_csvs(out / "rstd_hist.csv", out / "rstd_kde.csv")
    if parity is not None:
        parity.to_csv(out / "parity.csv", out / "parity_lines.csv")
    if svg:
        _render_svgs(out, calibration, rstd, parity)


def _render_svgs(out, calibration, rstd, parity):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if calibration is not None:
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.plot([0, 1], [0, 1], "k--", lw=1)
        ax.plot(calibration.expected_p, calibration.observed_p)
        ax.set(xlabel="expected cumulative probability", ylabel="observed",
               title=f"miscalibration area {calibration.miscalibration_area:.4f}")
        fig.savefig(out / "calibration.svg")
        plt.close(fig)
    if rstd is not None:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        widths = np.diff(rstd.bin_edges)
        total = max(rstd.counts.sum(), 1)
        ax.bar(rstd.bin_edges[:-1], rstd.counts / (total * widths), width=widths,
               align="edge", alpha=0.5)
        ax.plot(rstd.kde_x, rstd.kde_y)
        ax.set(xlabel="rStd (%)", ylabel="density")
        fig.savefig(out / "rstd.svg")
        plt.close(fig)
    if parity is not None:
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        ax.plot(parity.line_x, parity.identity, "k-", lw=1)
        ax.plot(parity.line_x, parity.band_lo, "k:", lw=1)
        ax.plot(parity.line_x, parity.band_hi, "k:", lw=1)
        ax.errorbar(parity.y_true, parity.mean,
                    yerr=[parity.mean - parity.lo_2sigma, parity.hi_2sigma - parity.mean],
                    fmt=".", ms=3, lw=0.5)
        ax.set(xlabel="measured CHF (kW/m2)", ylabel="predicted CHF (kW/m2)")
        fig.savefig(out / "parity.svg")
        plt.close(fig)
