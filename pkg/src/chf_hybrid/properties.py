"""Saturated-water properties from an embedded IAPWS-IF97 table.

The table holds 100 log-spaced pressure knots between 0.1 and 20 MPa and is
interpolated linearly in pressure. Regenerate it with
``tools/make_sat_table.py``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import RangeError

__all__ = [
    "SaturationRow",
    "SaturationTable",
    "load_table",
    "saturation_props",
    "saturation_arrays",
    "subcooling_to_inlet_enthalpy",
]

TABLE_HEADER = ["pressure_mpa", "t_sat_c", "h_f_kj_kg", "h_g_kj_kg", "h_fg_kj_kg"]


@dataclass(frozen=True)
class SaturationRow:
    pressure: float  # MPa
    t_sat: float  # degC
    h_f: float  # kJ/kg
    h_g: float  # kJ/kg
    h_fg: float  # kJ/kg


@dataclass(frozen=True)
class SaturationTable:
    """Column arrays of the saturation table, ascending in pressure."""

    pressure: np.ndarray
    t_sat: np.ndarray
    h_f: np.ndarray
    h_g: np.ndarray
    h_fg: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.pressure) <= 0):
            raise ValueError("saturation table pressures must be strictly increasing")
        for arr in (self.pressure, self.t_sat, self.h_f, self.h_g, self.h_fg):
            arr.setflags(write=False)

    @property
    def bounds(self) -> tuple[float, float]:
        return float(self.pressure[0]), float(self.pressure[-1])

    def __len__(self):
        return len(self.pressure)

    def row(self, i: int) -> SaturationRow:
        return SaturationRow(
            float(self.pressure[i]),
            float(self.t_sat[i]),
            float(self.h_f[i]),
            float(self.h_g[i]),
            float(self.h_fg[i]),
        )


@lru_cache(maxsize=1)
def load_table() -> SaturationTable:
    text = resources.files("chf_hybrid").joinpath("data/sat_table.csv").read_text()
    reader = csv.reader(text.splitlines())
    header = next(reader)
    if header != TABLE_HEADER:
        raise ValueError(f"unexpected saturation table header: {header}")
    cols = np.array([[float(v) for v in row] for row in reader if row]).T
    return SaturationTable(*cols)


def _check_bounds(pressure, table):
    lo, hi = table.bounds
    p = np.asarray(pressure, dtype=float)
    if not np.all(np.isfinite(p)) or np.any(p < lo) or np.any(p > hi):
        raise RangeError(
            f"pressure {pressure} MPa outside the saturation table interval [{lo}, {hi}] MPa"
        )
    return p


def saturation_props(pressure: float) -> SaturationRow:
    """Saturation properties at ``pressure`` (MPa), linear in pressure."""
    table = load_table()
    p = float(_check_bounds(pressure, table))
    i = int(np.searchsorted(table.pressure, p))
    if i < len(table) and table.pressure[i] == p:
        return table.row(i)
    return SaturationRow(p, *(float(np.interp(p, table.pressure, col))
                              for col in (table.t_sat, table.h_f, table.h_g, table.h_fg)))


def saturation_arrays(pressure) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``(h_f, h_fg)`` in kJ/kg for an array of pressures in MPa."""
    table = load_table()
    p = _check_bounds(pressure, table)
    return np.interp(p, table.pressure, table.h_f), np.interp(p, table.pressure, table.h_fg)


def subcooling_to_inlet_enthalpy(pressure: float, dh_sub: float) -> float:
    """Inlet enthalpy h_f(P) - dh_sub in kJ/kg."""
    if not dh_sub >= 0:
        raise ValueError(f"inlet subcooling must be non-negative, got {dh_sub}")
    return saturation_props(pressure).h_f - dh_sub
