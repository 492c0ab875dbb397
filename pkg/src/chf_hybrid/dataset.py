"""Record ingestion, dryout filtering, splitting, standardization, synthesis."""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .correlations import BaseModelKind, ChfRecord, VALIDITY, hbm_solve_many
from .errors import DegenerateFeatureError, GenerationError, ParseError, SchemaError, SizeError

log = logging.getLogger(__name__)

CSV_HEADER = ["d_m", "l_m", "p_mpa", "g_kg_m2_s", "dh_sub_kj_kg", "t_in_c", "x_e_out", "chf_kw_m2"]
_FIELDS = ["diameter", "heated_length", "pressure", "mass_flux", "inlet_subcooling",
           "inlet_temperature", "outlet_quality", "chf"]
_POSITIVE = {"d_m", "l_m", "p_mpa", "g_kg_m2_s", "chf_kw_m2"}

# Model inputs, in column order of every feature matrix.
FEATURES = ("diameter", "heated_length", "pressure", "mass_flux", "inlet_subcooling")

BWR_PRESSURE = (6.9, 7.2)  # MPa


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

def load_csv(path) -> list[ChfRecord]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected header {','.join(CSV_HEADER)}")
        header = [h.strip() for h in header]
        if header != CSV_HEADER:
            raise SchemaError(f"{path}: header {header} does not match {CSV_HEADER}")
        records = []
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise ParseError(f"{path}:{row_no}: expected {len(CSV_HEADER)} cells, got {len(row)}",
                                 row=row_no)
            values = {}
            for col, name, cell in zip(CSV_HEADER, _FIELDS, row):
                cell = cell.strip()
                if col == "t_in_c" and cell == "":
                    values[name] = None
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(f"{path}:{row_no}: column {col}: cannot parse {cell!r}",
                                     row=row_no, column=col) from None
                if not math.isfinite(v):
                    raise ParseError(f"{path}:{row_no}: column {col}: non-finite value",
                                     row=row_no, column=col)
                if col in _POSITIVE and v <= 0:
                    raise ParseError(f"{path}:{row_no}: column {col}: must be positive, got {v}",
                                     row=row_no, column=col)
                if col == "dh_sub_kj_kg" and v < 0:
                    raise ParseError(f"{path}:{row_no}: column {col}: must be non-negative",
                                     row=row_no, column=col)
                values[name] = v
            records.append(ChfRecord(**values))
    if not records:
        warnings.warn(f"{path}: no data rows", stacklevel=2)
    log.info("loaded %d records from %s", len(records), path)
    return records


def write_csv(records: Sequence[ChfRecord], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([
                "" if getattr(r, name) is None else repr(float(getattr(r, name)))
                for name in _FIELDS
            ])


# --------------------------------------------------------------------------
# Filtering
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FilterCriteria:
    d_range: tuple = VALIDITY["diameter"]
    l_range: tuple = VALIDITY["heated_length"]
    p_range: tuple = VALIDITY["pressure"]
    g_range: tuple = VALIDITY["mass_flux"]
    min_outlet_quality: float = 0.2

    def __post_init__(self):
        for name in ("d_range", "l_range", "p_range", "g_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name}: lower bound {lo} must be below upper bound {hi}")

    def checks(self):
        """(label, predicate) pairs in reporting order."""
        def within(attr, rng):
            return lambda r: rng[0] <= getattr(r, attr) <= rng[1]
        return [
            ("D", within("diameter", self.d_range)),
            ("L", within("heated_length", self.l_range)),
            ("P", within("pressure", self.p_range)),
            ("G", within("mass_flux", self.g_range)),
            ("x_e", lambda r: r.outlet_quality >= self.min_outlet_quality),
        ]

    def describe(self) -> list[str]:
        return [
            f"D (m): {self.d_range[0]:g} - {self.d_range[1]:g}",
            f"L (m): {self.l_range[0]:.2f} - {self.l_range[1]:.2f}",
            f"P (MPa): {self.p_range[0]:.2f} - {self.p_range[1]:.1f}",
            f"G (kg/m2/s): {self.g_range[0]:g} - {self.g_range[1]:g}",
            f"Outlet x_e: >= {self.min_outlet_quality:g}",
        ]


def removal_counts(records, criteria: Optional[FilterCriteria] = None) -> dict[str, int]:
    """Records removed per criterion, each charged to the first check it fails."""
    criteria = criteria or FilterCriteria()
    checks = criteria.checks()
    counts = {label: 0 for label, _ in checks}
    for r in records:
        for label, ok in checks:
            if not ok(r):
                counts[label] += 1
                break
    return counts


def filter_do(records, criteria: Optional[FilterCriteria] = None) -> list[ChfRecord]:
    """Keep dryout records inside every (closed) criterion range, order preserved."""
    criteria = criteria or FilterCriteria()
    checks = [ok for _, ok in criteria.checks()]
    kept = [r for r in records if all(ok(r) for ok in checks)]
    log.info("filter_do kept %d of %d records", len(kept), len(records))
    return kept


def bwr_filter(records) -> list[ChfRecord]:
    lo, hi = BWR_PRESSURE
    return [r for r in records if lo <= r.pressure <= hi]


# --------------------------------------------------------------------------
# Splitting
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSplit:
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    seed: int
    fractions: tuple = (0.8, 0.1, 0.1)

    def __post_init__(self):
        for name in ("train_idx", "val_idx", "test_idx"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        allidx = np.concatenate([self.train_idx, self.val_idx, self.test_idx])
        if np.unique(allidx).size != allidx.size:
            raise ValueError("split partitions overlap or contain duplicates")

    @property
    def sizes(self):
        return len(self.train_idx), len(self.val_idx), len(self.test_idx)

    def to_json(self, path=None):
        text = json.dumps({
            "seed": int(self.seed),
            "fractions": list(self.fractions),
            "train_idx": self.train_idx.tolist(),
            "val_idx": self.val_idx.tolist(),
            "test_idx": self.test_idx.tolist(),
        }, indent=1) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, path):
        d = json.loads(Path(path).read_text())
        return cls(d["train_idx"], d["val_idx"], d["test_idx"], d["seed"], tuple(d["fractions"]))


def shuffle_split(records_or_n, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> DatasetSplit:
    """Seeded permutation sliced contiguously into train/val/test.

    train = round(f_train * N), val = round(f_val * N), test = remainder
    (N = 9188 gives 7350 / 919 / 919).
    """
    n = records_or_n if isinstance(records_or_n, (int, np.integer)) else len(records_or_n)
    if n < 10:
        raise SizeError(f"shuffle_split needs at least 10 records, got {n}")
    if len(fractions) != 3 or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ValueError(f"fractions must be three values summing to 1, got {fractions}")
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    if n_train < 1 or n_train + n_val > n:
        raise SizeError(f"fractions {fractions} leave an empty partition for N={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return DatasetSplit(perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:],
                        seed, tuple(fractions))


def limit_train(split: DatasetSplit, n: int = 9) -> DatasetSplit:
    """Truncate the training partition to its first ``n`` entries."""
    if n < 1:
        raise SizeError("limited training set must contain at least one point")
    if n > len(split.train_idx):
        raise SizeError(f"cannot keep {n} training points, only {len(split.train_idx)} available")
    return DatasetSplit(split.train_idx[:n], split.val_idx, split.test_idx, split.seed, split.fractions)


# --------------------------------------------------------------------------
# Standardization
# --------------------------------------------------------------------------

def feature_matrix(records, names=FEATURES) -> np.ndarray:
    return np.array([[getattr(r, n) for n in names] for r in records], dtype=float).reshape(-1, len(names))


@dataclass(frozen=True)
class StandardScaler:
    feature_names: tuple
    means: np.ndarray
    stds: np.ndarray
    target_mean: float
    target_std: float
    scope: str = "full"
    target_name: str = "chf"

    def transform(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != len(self.feature_names):
            from .errors import ConfigError
            raise ConfigError(f"scaler expects {len(self.feature_names)} features, got {x.shape[-1]}")
        return (x - self.means) / self.stds

    def inverse_transform(self, z):
        return np.asarray(z, dtype=float) * self.stds + self.means

    def transform_target(self, y):
        return (np.asarray(y, dtype=float) - self.target_mean) / self.target_std

    def inverse_target(self, z):
        return np.asarray(z, dtype=float) * self.target_std + self.target_mean

    def to_dict(self):
        return {
            "feature_names": list(self.feature_names),
            "means": [float(v) for v in self.means],
            "stds": [float(v) for v in self.stds],
            "target_name": self.target_name,
            "target_mean": float(self.target_mean),
            "target_std": float(self.target_std),
            "scope": self.scope,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["feature_names"]), np.array(d["means"]), np.array(d["stds"]),
                   d["target_mean"], d["target_std"], d.get("scope", "full"),
                   d.get("target_name", "chf"))

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_scaler(records, feature_names=FEATURES, scope: str = "full",
               split: Optional[DatasetSplit] = None, target=None,
               target_name: str = "chf") -> StandardScaler:
    """Z-score statistics over all records (``scope="full"``) or the training partition.

    ``target`` overrides the CHF column, e.g. with hybrid residuals aligned
    to ``records``.
    """
    x = feature_matrix(records, feature_names)
    y = np.array([r.chf for r in records], dtype=float) if target is None else np.asarray(target, float)
    if scope == "train-only":
        if split is None:
            raise ValueError("scope='train-only' requires a split")
        x, y = x[split.train_idx], y[split.train_idx]
    elif scope != "full":
        raise ValueError(f"unknown scaler scope {scope!r}")
    means = x.mean(axis=0)
    stds = x.std(axis=0)
    for name, s in zip(feature_names, stds):
        if not s > 0:
            raise DegenerateFeatureError(f"feature {name!r} has zero variance")
    t_std = float(y.std())
    if not t_std > 0:
        raise DegenerateFeatureError(f"target {target_name!r} has zero variance")
    return StandardScaler(tuple(feature_names), means, stds, float(y.mean()), t_std, scope, target_name)


# --------------------------------------------------------------------------
# Synthetic data
# --------------------------------------------------------------------------

SYNTH_SUBCOOLING = (10.0, 800.0)  # kJ/kg


def synth_generate(n: int, seed: int, base=BaseModelKind.BIASI, noise_rel: float = 0.05,
                   criteria: Optional[FilterCriteria] = None, batch: int = 4096) -> list[ChfRecord]:
    """Records with CHF = base correlation (via HBM) x (1 + eps), eps ~ N(0, noise_rel).

    Inputs are uniform over the filter ranges; candidates whose noiseless
    heat-balance quality is below the dryout threshold are rejected. The
    stored outlet quality is that noiseless quality.
    """
    base = BaseModelKind(base)
    if base is BaseModelKind.NO_BASE:
        raise ValueError("synthetic generation needs a base correlation")
    if noise_rel < 0:
        raise ValueError("noise_rel must be non-negative")
    criteria = criteria or FilterCriteria()
    rng = np.random.default_rng(seed)
    out: list[ChfRecord] = []
    drawn = 0
    max_draws = 100 * max(n, 1)
    while len(out) < n:
        if drawn >= max_draws:
            raise GenerationError(
                f"acceptance rate below 1%: {len(out)} of {n} records after {drawn} draws"
            )
        k = min(batch, max_draws - drawn)
        drawn += k
        cand = [
            ChfRecord(d, l, p, g, dh, 0.0, 1.0)
            for d, l, p, g, dh in zip(
                rng.uniform(*criteria.d_range, k), rng.uniform(*criteria.l_range, k),
                rng.uniform(*criteria.p_range, k), rng.uniform(*criteria.g_range, k),
                rng.uniform(*SYNTH_SUBCOOLING, k))
        ]
        eps = rng.normal(0.0, noise_rel, k) if noise_rel > 0 else np.zeros(k)
        res = hbm_solve_many(base, cand)
        for r, q, x, e in zip(cand, res.chf, res.quality, eps):
            if not np.isfinite(q) or x < criteria.min_outlet_quality:
                continue
            chf = float(q * max(1.0 + e, 1e-3))
            out.append(ChfRecord(r.diameter, r.heated_length, r.pressure, r.mass_flux,
                                 r.inlet_subcooling, float(x), chf))
            if len(out) == n:
                break
    return out
