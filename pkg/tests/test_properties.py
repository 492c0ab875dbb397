import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chf_hybrid.errors import RangeError
from chf_hybrid.properties import (load_table, saturation_arrays, saturation_props,
                                   subcooling_to_inlet_enthalpy)

# IAPWS-IF97 reference values (kJ/kg) at round pressures
REFERENCE = [
    (1.0, 762.7, 2777.1),
    (7.0, 1267.4, 2772.6),
    (10.0, 1407.9, 2725.5),
    (15.0, 1610.2, 2610.9),
]


@pytest.mark.parametrize("p, hf, hg", REFERENCE)
def test_matches_reference_steam_tables(p, hf, hg):
    row = saturation_props(p)
    assert row.h_f == pytest.approx(hf, rel=0.01)
    assert row.h_g == pytest.approx(hg, rel=0.01)
    assert row.h_fg == pytest.approx(hg - hf, rel=0.01)


def test_latent_heat_at_bwr_pressure():
    assert saturation_props(7.0).h_fg == pytest.approx(1505.0, rel=0.01)


def test_knots_are_reproduced_exactly():
    table = load_table()
    for i in (0, 17, len(table) - 1):
        row = saturation_props(float(table.pressure[i]))
        assert row == table.row(i)


def test_table_is_consistent():
    table = load_table()
    assert len(table) == 100
    np.testing.assert_allclose(table.h_g - table.h_f, table.h_fg, rtol=1e-9)
    assert table.bounds[0] <= 0.27 and table.bounds[1] >= 14.0


@pytest.mark.parametrize("p", [0.05, 25.0, float("nan")])
def test_out_of_range_pressure(p):
    with pytest.raises(RangeError):
        saturation_props(p)


@settings(max_examples=1000, deadline=None)
@given(st.floats(0.1, 19.9), st.floats(1e-3, 0.1))
def test_monotone_in_pressure(p, dp):
    a, b = saturation_props(p), saturation_props(p + dp)
    assert b.t_sat > a.t_sat
    assert b.h_f > a.h_f
    assert b.h_fg < a.h_fg


def test_vectorized_matches_scalar():
    p = np.linspace(0.3, 13.9, 57)
    hf, hfg = saturation_arrays(p)
    for i in (0, 20, 56):
        row = saturation_props(p[i])
        assert hf[i] == row.h_f and hfg[i] == row.h_fg


def test_subcooling_conversion():
    assert subcooling_to_inlet_enthalpy(7.0, 0.0) == saturation_props(7.0).h_f
    assert subcooling_to_inlet_enthalpy(7.0, 100.0) == pytest.approx(saturation_props(7.0).h_f - 100.0)
    with pytest.raises(ValueError):
        subcooling_to_inlet_enthalpy(7.0, -1.0)
