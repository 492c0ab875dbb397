"""Biasi and Bowring dryout CHF correlations and the heat-balance method.

Both correlations follow Todreas & Kazimi, *Nuclear Systems I*. Public
functions take SI inputs (m, MPa, kg/m2/s, kJ/kg) and return kW/m2; the
historical unit systems stay inside the ``_to_*_units`` helpers.

The heat-balance method (HBM) finds the heat flux q* that is self-consistent
with the channel energy balance::

    x_e(q) = 4 q L / (D G h_fg) - dh_sub / h_fg
    q*     = CHF(D, P, G, x_e(q*))

It brackets a sign change of ``g(q) = q - CHF(x_e(q))`` on a log-spaced probe
grid and then bisects. All solver code is vectorized over records.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import BracketError, ConvergenceError, NumericError, ValidityError
from .properties import saturation_arrays

log = logging.getLogger(__name__)

__all__ = [
    "ChfRecord",
    "BaseModelKind",
    "VALIDITY",
    "biasi_chf",
    "biasi_branches",
    "bowring_chf",
    "bowring_local_chf",
    "quality_from_heat_balance",
    "solve_hbm",
    "HbmResult",
    "hbm_solve",
    "hbm_solve_many",
    "baseline_metrics",
]


@dataclass(frozen=True)
class ChfRecord:
    """One experimental CHF measurement in SI units (heat flux in kW/m2)."""

    diameter: float  # m
    heated_length: float  # m
    pressure: float  # MPa
    mass_flux: float  # kg/m2/s
    inlet_subcooling: float  # kJ/kg
    outlet_quality: float
    chf: float  # kW/m2
    inlet_temperature: Optional[float] = None  # degC


class BaseModelKind(str, enum.Enum):
    NO_BASE = "none"
    BIASI = "biasi"
    BOWRING = "bowring"


# Common validity window of both correlations, closed intervals.
VALIDITY = {
    "diameter": (0.003, 0.0375),
    "heated_length": (0.20, 3.70),
    "pressure": (0.27, 14.0),
    "mass_flux": (136.0, 6000.0),
}


def _check_range(name, value):
    lo, hi = VALIDITY[name]
    v = np.asarray(value, dtype=float)
    bad = ~np.isfinite(v) | (v < lo) | (v > hi)
    if np.any(bad):
        offending = v[bad] if v.ndim else v
        raise ValidityError(
            f"{name} = {np.ravel(offending)[0]:g} outside validity range [{lo:g}, {hi:g}]"
        )


def _check_finite_output(q, name):
    if not np.all(np.isfinite(q)):
        raise NumericError(f"{name} produced a non-finite CHF")
    return q


# --------------------------------------------------------------------------
# Biasi
# --------------------------------------------------------------------------

W_CM2_TO_KW_M2 = 10.0


def _to_biasi_units(diameter, pressure, mass_flux):
    """SI (m, MPa, kg/m2/s) -> (cm, bar, g/cm2/s)."""
    return np.multiply(diameter, 100.0), np.multiply(pressure, 10.0), np.multiply(mass_flux, 0.1)


def _from_biasi_units(d_cm, p_bar, g_cgs):
    return np.divide(d_cm, 100.0), np.divide(p_bar, 10.0), np.divide(g_cgs, 0.1)


def _biasi_raw(diameter, pressure, mass_flux, quality):
    """Low- and high-quality Biasi branches in kW/m2, no range checks."""
    d, p, g = _to_biasi_units(diameter, pressure, mass_flux)
    x = np.asarray(quality, dtype=float)
    n = np.where(d >= 1.0, 0.4, 0.6)
    f_p = 0.7249 + 0.099 * p * np.exp(-0.032 * p)
    h_p = -1.159 + 0.149 * p * np.exp(-0.019 * p) + 8.99 * p / (10.0 + p**2)
    g6 = g ** (1.0 / 6.0)
    low = 1.883e3 / (d**n * g6) * (f_p / g6 - x)
    high = 3.78e3 * h_p / (d**n * g**0.6) * (1.0 - x)
    return low * W_CM2_TO_KW_M2, high * W_CM2_TO_KW_M2


def biasi_branches(diameter, pressure, mass_flux, quality):
    """Return ``(chf, branch)`` where branch is ``"low"`` or ``"high"`` per point."""
    _check_range("diameter", diameter)
    _check_range("pressure", pressure)
    _check_range("mass_flux", mass_flux)
    if not np.all(np.asarray(quality) < 1.0):
        raise ValidityError("quality must be below 1 for the Biasi correlation")
    low, high = _biasi_raw(diameter, pressure, mass_flux, quality)
    chf = _check_finite_output(np.maximum(low, high), "Biasi")
    branch = np.where(low >= high, "low", "high")
    if chf.ndim == 0:
        return float(chf), str(branch)
    return chf, branch


def biasi_chf(diameter, pressure, mass_flux, quality):
    """Biasi CHF in kW/m2: the larger of the low- and high-quality branches."""
    return biasi_branches(diameter, pressure, mass_flux, quality)[0]


# --------------------------------------------------------------------------
# Bowring
# --------------------------------------------------------------------------

def _bowring_pressure_factors(pressure):
    """F1..F4 for reduced pressure p_r = 0.145 P (P in MPa)."""
    pr = 0.145 * np.asarray(pressure, dtype=float)
    below = pr < 1.0
    f1_lo = (pr**18.942 * np.exp(20.89 * (1.0 - pr)) + 0.917) / 1.917
    f1f2_lo = (pr**1.316 * np.exp(2.444 * (1.0 - pr)) + 0.309) / 1.309
    f3_lo = (pr**17.023 * np.exp(16.658 * (1.0 - pr)) + 0.667) / 1.667
    f1_hi = pr**-0.368 * np.exp(0.648 * (1.0 - pr))
    f1f2_hi = pr**-0.448 * np.exp(0.245 * (1.0 - pr))
    f3_hi = pr**0.219
    f1 = np.where(below, f1_lo, f1_hi)
    f2 = f1 / np.where(below, f1f2_lo, f1f2_hi)
    f3 = np.where(below, f3_lo, f3_hi)
    f4 = f3 * pr**1.649
    return pr, f1, f2, f3, f4


def _bowring_coefficients(diameter, pressure, mass_flux):
    """Bowring A [W/m], B [kg/m/s], C [m] and h_fg [J/kg] in SI base units."""
    d = np.asarray(diameter, dtype=float)
    g = np.asarray(mass_flux, dtype=float)
    pr, f1, f2, f3, f4 = _bowring_pressure_factors(pressure)
    h_fg = saturation_arrays(pressure)[1] * 1e3
    n = 2.0 - 0.5 * pr
    a = 2.317 * (h_fg * d * g / 4.0) * f1 / (1.0 + 0.0143 * f2 * np.sqrt(d) * g)
    b = 0.25 * d * g
    c = 0.077 * f3 * d * g / (1.0 + 0.347 * f4 * (g / 1356.0) ** n)
    return a, b, c, h_fg


def bowring_chf(diameter, heated_length, pressure, mass_flux, inlet_subcooling):
    """Bowring CHF in kW/m2, inlet-conditions form (A + B dh_sub) / (C + L)."""
    _check_range("diameter", diameter)
    _check_range("heated_length", heated_length)
    _check_range("pressure", pressure)
    _check_range("mass_flux", mass_flux)
    a, b, c, _ = _bowring_coefficients(diameter, pressure, mass_flux)
    q = (a + b * np.asarray(inlet_subcooling, dtype=float) * 1e3) / (c + heated_length)
    q = _check_finite_output(q * 1e-3, "Bowring")
    return float(q) if np.ndim(q) == 0 else q


def _bowring_local_raw(diameter, pressure, mass_flux, quality):
    a, b, c, h_fg = _bowring_coefficients(diameter, pressure, mass_flux)
    return (a - b * h_fg * np.asarray(quality, dtype=float)) / c * 1e-3


def bowring_local_chf(diameter, pressure, mass_flux, quality):
    """Bowring CHF in kW/m2, local-conditions form (A - B h_fg x) / C.

    Combined with the heat balance this reproduces :func:`bowring_chf`
    exactly, so iterating it through the HBM is only a consistency check.
    """
    _check_range("diameter", diameter)
    _check_range("pressure", pressure)
    _check_range("mass_flux", mass_flux)
    q = _check_finite_output(_bowring_local_raw(diameter, pressure, mass_flux, quality), "Bowring")
    return float(q) if np.ndim(q) == 0 else q


# --------------------------------------------------------------------------
# Heat balance
# --------------------------------------------------------------------------

def _columns(records: Sequence[ChfRecord]):
    return {
        name: np.array([getattr(r, name) for r in records], dtype=float)
        for name in ("diameter", "heated_length", "pressure", "mass_flux", "inlet_subcooling")
    }


def _balance_coefficients(cols):
    """Return (slope, offset) with x_e(q) = slope * q - offset."""
    h_fg = saturation_arrays(cols["pressure"])[1]
    slope = 4.0 * cols["heated_length"] / (cols["diameter"] * cols["mass_flux"] * h_fg)
    offset = cols["inlet_subcooling"] / h_fg
    return slope, offset


def quality_from_heat_balance(heat_flux: float, record: ChfRecord) -> float:
    """Outlet equilibrium quality for a uniform ``heat_flux`` (kW/m2)."""
    if not heat_flux > 0:
        raise ValueError(f"heat flux must be positive, got {heat_flux}")
    slope, offset = _balance_coefficients(_columns([record]))
    return float(slope[0] * heat_flux - offset[0])


@dataclass
class HbmResult:
    """Vectorized HBM output; ``chf`` is NaN wherever ``failures`` has an entry."""

    chf: np.ndarray
    quality: np.ndarray
    n_roots: np.ndarray
    failures: dict = field(default_factory=dict)

    def raise_first(self):
        if self.failures:
            idx, err = next(iter(self.failures.items()))
            raise type(err)(f"record {idx}: {err}")


# chf_of_quality(quality, rows) -> CHF in kW/m2, where rows indexes the records
QualityCorrelation = Callable[[np.ndarray, np.ndarray], np.ndarray]


def solve_hbm(
    chf_of_quality: QualityCorrelation,
    records: Sequence[ChfRecord],
    bracket=(1.0, 20_000.0),
    n_probes: int = 64,
    rtol: float = 1e-6,
    max_iter: int = 200,
) -> HbmResult:
    """Fixed points q = chf_of_quality(x_e(q)) for every record.

    Scans ``n_probes`` log-spaced heat fluxes over ``bracket`` for sign changes
    of q - f(q), bisects the lowest one, and returns f at the converged point.
    """
    n = len(records)
    cols = _columns(records)
    slope, offset = _balance_coefficients(cols)
    rows = np.arange(n)

    def g(q, sel):
        x = slope[sel] * q - offset[sel]
        return q - chf_of_quality(x, sel)

    probes = np.geomspace(bracket[0], bracket[1], n_probes)
    q_grid = np.broadcast_to(probes, (n, n_probes))
    with np.errstate(all="ignore"):
        g_grid = g(q_grid.ravel(), np.repeat(rows, n_probes)).reshape(n, n_probes)
    s = np.sign(g_grid)
    change = (s[:, :-1] * s[:, 1:] <= 0) & np.isfinite(g_grid[:, :-1]) & np.isfinite(g_grid[:, 1:])
    n_roots = change.sum(axis=1)

    chf = np.full(n, np.nan)
    quality = np.full(n, np.nan)
    failures = {}
    ok = n_roots > 0
    for i in np.flatnonzero(~ok):
        failures[int(i)] = BracketError(
            f"no sign change of q - f(q) over [{bracket[0]:g}, {bracket[1]:g}] kW/m2"
        )
    multi = np.flatnonzero(n_roots > 1)
    if multi.size:
        log.warning("HBM: %d record(s) have multiple fixed points; using the smallest", multi.size)

    sel = np.flatnonzero(ok)
    if sel.size:
        k = np.argmax(change[sel], axis=1)
        lo = probes[k].copy()
        hi = probes[k + 1].copy()
        g_lo = g_grid[sel, k]
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            with np.errstate(all="ignore"):
                g_mid = g(mid, sel)
            same = np.sign(g_mid) == np.sign(g_lo)
            lo = np.where(same, mid, lo)
            g_lo = np.where(same, g_mid, g_lo)
            hi = np.where(same, hi, mid)
            if np.all((hi - lo) <= 1e-14 * hi):
                break
        q_bis = 0.5 * (lo + hi)
        with np.errstate(all="ignore"):
            q_pol = chf_of_quality(slope[sel] * q_bis - offset[sel], sel)
            r_bis = np.abs(g(q_bis, sel)) / q_bis
            r_pol = np.abs(g(q_pol, sel)) / q_pol
        use_pol = np.isfinite(r_pol) & (q_pol > 0) & (r_pol <= r_bis)
        q_star = np.where(use_pol, q_pol, q_bis)
        resid = np.where(use_pol, r_pol, r_bis)
        good = np.isfinite(resid) & (resid <= rtol)
        for i, r in zip(sel[~good], resid[~good]):
            failures[int(i)] = ConvergenceError(
                f"HBM did not converge within {max_iter} iterations (last relative residual {r:.3g})"
            )
        chf[sel[good]] = q_star[good]
        quality[sel[good]] = slope[sel[good]] * q_star[good] - offset[sel[good]]
    return HbmResult(chf, quality, n_roots, dict(sorted(failures.items())))


def _correlation_for(kind: BaseModelKind, cols) -> QualityCorrelation:
    kind = BaseModelKind(kind)
    if kind is BaseModelKind.BIASI:
        def f(x, sel):
            low, high = _biasi_raw(cols["diameter"][sel], cols["pressure"][sel],
                                   cols["mass_flux"][sel], x)
            return np.maximum(low, high)
        return f
    if kind is BaseModelKind.BOWRING:
        def f(x, sel):
            return _bowring_local_raw(cols["diameter"][sel], cols["pressure"][sel],
                                      cols["mass_flux"][sel], x)
        return f
    raise ValueError("NoBase has no correlation to solve")


def hbm_solve_many(kind, records: Sequence[ChfRecord], bowring_mode: str = "direct", **solver) -> HbmResult:
    """Base-model CHF for many records.

    Biasi always goes through the heat balance. Bowring defaults to its
    inlet-conditions form (``bowring_mode="direct"``); ``"hbm"`` iterates the
    local form instead, which gives the same answer to solver tolerance.
    """
    kind = BaseModelKind(kind)
    if kind is BaseModelKind.NO_BASE:
        raise ValueError("hbm_solve requires a base correlation, not NoBase")
    cols = _columns(records)
    for name in VALIDITY:
        _check_range(name, cols[name])
    if kind is BaseModelKind.BOWRING and bowring_mode == "direct":
        q = np.asarray(bowring_chf(cols["diameter"], cols["heated_length"], cols["pressure"],
                                   cols["mass_flux"], cols["inlet_subcooling"]), dtype=float)
        slope, offset = _balance_coefficients(cols)
        res = HbmResult(q, slope * q - offset, np.ones(len(records), dtype=int), {})
    elif bowring_mode not in ("direct", "hbm"):
        raise ValueError(f"unknown bowring_mode {bowring_mode!r}")
    else:
        res = solve_hbm(_correlation_for(kind, cols), records, **solver)
    return _reject_dry_fixed_points(res)


def _reject_dry_fixed_points(res: HbmResult) -> HbmResult:
    """A fixed point past complete evaporation (x_e >= 1) is not a dryout prediction."""
    bad = np.flatnonzero(res.quality >= 1.0)
    for i in bad:
        res.failures[int(i)] = ValidityError(f"fixed point has outlet quality {res.quality[i]:.4f} >= 1")
    res.chf[bad] = np.nan
    res.quality[bad] = np.nan
    res.failures = dict(sorted(res.failures.items()))
    return res


def hbm_solve(kind, record: ChfRecord, **kwargs) -> float:
    """Base-model CHF (kW/m2) for one record; raises on solver failure."""
    res = hbm_solve_many(kind, [record], **kwargs)
    res.raise_first()
    return float(res.chf[0])


def baseline_metrics(kind, records: Sequence[ChfRecord], **kwargs):
    """Stand-alone correlation metrics of HBM predictions against measured CHF."""
    from .evalsuite import point_metrics

    res = hbm_solve_many(kind, records, **kwargs)
    res.raise_first()
    y = np.array([r.chf for r in records], dtype=float)
    return point_metrics(y, res.chf)
