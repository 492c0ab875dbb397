"""Throwaway hand evaluation of the Biasi and Bowring formulas.

Written straight from the textbook in each correlation's native units with
scalar ``math`` only; it shares nothing with ``chf_hybrid.correlations``.
Re-run to regenerate ``tests/data/correlation_golden.csv``.
"""
import csv
import math
from pathlib import Path

ROOT = Path(__file__).resolve().parents[2]
SAT = ROOT / "src" / "chf_hybrid" / "data" / "sat_table.csv"
OUT = ROOT / "tests" / "data" / "correlation_golden.csv"


def hfg_kj(p_mpa):
    with open(SAT) as fh:
        rows = [(float(r["pressure_mpa"]), float(r["h_fg_kj_kg"])) for r in csv.DictReader(fh)]
    for (p0, h0), (p1, h1) in zip(rows, rows[1:]):
        if p0 <= p_mpa <= p1:
            return h0 + (h1 - h0) * (p_mpa - p0) / (p1 - p0)
    raise ValueError(p_mpa)


def biasi(d_m, p_mpa, g_si, x):
    D = d_m * 100.0          # cm
    P = p_mpa * 10.0         # bar
    G = g_si / 10.0          # g/cm2/s
    n = 0.4 if D >= 1.0 else 0.6
    F = 0.7249 + 0.099 * P * math.exp(-0.032 * P)
    H = -1.159 + 0.149 * P * math.exp(-0.019 * P) + 8.99 * P / (10 + P * P)
    q_low = 1.883e3 / (D**n * G ** (1 / 6)) * (F / G ** (1 / 6) - x)
    q_high = 3.78e3 * H / (D**n * G**0.6) * (1 - x)
    return max(q_low, q_high) * 10.0   # W/cm2 -> kW/m2


def bowring(d_m, l_m, p_mpa, g_si, dh_sub_kj):
    pr = 0.145 * p_mpa
    if pr < 1:
        F1 = (pr**18.942 * math.exp(20.89 * (1 - pr)) + 0.917) / 1.917
        F1_over_F2 = (pr**1.316 * math.exp(2.444 * (1 - pr)) + 0.309) / 1.309
        F3 = (pr**17.023 * math.exp(16.658 * (1 - pr)) + 0.667) / 1.667
    else:
        F1 = pr**-0.368 * math.exp(0.648 * (1 - pr))
        F1_over_F2 = pr**-0.448 * math.exp(0.245 * (1 - pr))
        F3 = pr**0.219
    F2 = F1 / F1_over_F2
    F4 = F3 * pr**1.649
    n = 2.0 - 0.5 * pr
    hfg = hfg_kj(p_mpa) * 1000.0
    A = 2.317 * (hfg * d_m * g_si / 4) * F1 / (1 + 0.0143 * F2 * math.sqrt(d_m) * g_si)
    B = 0.25 * d_m * g_si
    C = 0.077 * F3 * d_m * g_si / (1 + 0.347 * F4 * (g_si / 1356.0) ** n)
    return (A + B * dh_sub_kj * 1000.0) / (C + l_m) / 1000.0


def main():
    rows = []
    for case, (d, p, g, x) in {
        "biasi_ref": (0.008, 7.0, 2000.0, 0.4),
        "biasi_large_d": (0.02, 10.0, 1000.0, 0.5),
        "biasi_low_g": (0.005, 1.0, 300.0, 0.7),
        "biasi_low_branch": (0.012, 4.0, 5000.0, 0.2),
    }.items():
        rows.append([case, "biasi", d, "", p, g, "", x, biasi(d, p, g, x)])
    for case, (d, l, p, g, dh) in {
        "bowring_ref": (0.01, 2.0, 6.895, 1500.0, 200.0),
        "bowring_low_p": (0.006, 1.0, 2.0, 800.0, 50.0),
        "bowring_high_p": (0.03, 3.5, 12.0, 4000.0, 400.0),
    }.items():
        rows.append([case, "bowring", d, l, p, g, dh, "", bowring(d, l, p, g, dh)])
    # closed loop: choose dh_sub so the heat balance lands exactly on x = 0.4
    d, p, g, x, l = 0.008, 7.0, 2000.0, 0.4, 2.5
    q = biasi(d, p, g, x)
    dh = 4 * q * l / (d * g) - x * hfg_kj(p)
    rows.append(["biasi_hbm_loop", "biasi_hbm", d, l, p, g, dh, x, q])
    with open(OUT, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "correlation", "d_m", "l_m", "p_mpa", "g_kg_m2_s",
                    "dh_sub_kj_kg", "x_e", "chf_kw_m2"])
        for r in rows:
            w.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in r])


if __name__ == "__main__":
    main()
