"""Regenerate src/chf_hybrid/data/sat_table.csv from IAPWS-IF97.

Build-time only; the package reads the CSV and never imports iapws.

    pip install iapws
    python tools/make_sat_table.py
"""
from pathlib import Path

import numpy as np
from iapws import IAPWS97

OUT = Path(__file__).resolve().parents[1] / "src" / "chf_hybrid" / "data" / "sat_table.csv"


def main():
    pressures = np.geomspace(0.1, 20.0, 100)
    lines = ["pressure_mpa,t_sat_c,h_f_kj_kg,h_g_kj_kg,h_fg_kj_kg"]
    for p in pressures:
        liq = IAPWS97(P=float(p), x=0)
        vap = IAPWS97(P=float(p), x=1)
        h_f = round(liq.h, 6)
        h_g = round(vap.h, 6)
        lines.append(
            f"{p:.10g},{liq.T - 273.15:.6f},{h_f:.6f},{h_g:.6f},{h_g - h_f:.6f}"
        )
    OUT.write_text("\n".join(lines) + "\n")
    print(f"wrote {len(pressures)} knots to {OUT}")


if __name__ == "__main__":
    main()
