"""Look-up-free CHF estimates for a handful of tube conditions.

Prints the local Biasi and Bowring values at a fixed outlet quality, then
the heat-balance fixed point each one implies for the same tube, and
finally the stand-alone accuracy of both correlations on a synthetic set.

    python3 demos/correlations_tour.py
"""
from chf_hybrid.correlations import (ChfRecord, baseline_metrics, biasi_chf, bowring_chf,
                                     hbm_solve)
from chf_hybrid.dataset import synth_generate
from chf_hybrid.hybrid import solvable_records

tubes = [
    # diameter m, heated length m, pressure MPa, mass flux kg/m2/s, inlet subcooling kJ/kg
    ChfRecord(0.008, 1.0, 7.0, 1500.0, 150.0, 0.3, 0.0),
    ChfRecord(0.010, 2.0, 10.0, 3000.0, 300.0, 0.2, 0.0),
    ChfRecord(0.012, 3.0, 13.0, 1000.0, 100.0, 0.4, 0.0),
]

print(f"{'D mm':>6} {'P MPa':>6} {'G':>6} {'Biasi@x':>9} {'Bowring':>9} {'HBM Biasi':>10}")
for t in tubes:
    b = biasi_chf(t.diameter, t.pressure, t.mass_flux, t.outlet_quality)
    w = bowring_chf(t.diameter, t.heated_length, t.pressure, t.mass_flux, t.inlet_subcooling)
    h = hbm_solve("biasi", t)
    print(f"{1000 * t.diameter:6.1f} {t.pressure:6.1f} {t.mass_flux:6.0f} {b:9.1f} {w:9.1f} {h:10.1f}")

# synthetic data is Biasi plus 5% noise, so Biasi lands near 4% and Bowring carries its own model error
records = solvable_records(synth_generate(2000, seed=1))
for kind in ("biasi", "bowring"):
    m = baseline_metrics(kind, records)
    print(f"{kind:8s} mu_error {m.mu_error:6.2f}%  rRMSE {m.rrmse:6.2f}%  R2 {m.r2:.4f}")
