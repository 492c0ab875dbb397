"""Residual-learning experiments: base correlation + ML correction with uncertainty.

For each record the base correlation (solved through the heat balance)
gives ``y_hat``; the ML backend learns the residual ``r = y - y_hat`` from
the five inputs. At test time the predicted residual distribution is
shifted by ``y_hat`` point by point, so the uncertainty is the ML model's
and the metrics are computed on the final CHF. With ``base="none"`` the
estimate is 0 and the backend regresses CHF directly.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import threading
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .correlations import BaseModelKind, ChfRecord, hbm_solve_many
from .dataset import (FEATURES, DatasetSplit, StandardScaler, feature_matrix, fit_scaler,
                      limit_train)
from .errors import ConfigError, StageError
from .evalsuite import (MetricsReport, calibration_curve, metrics, parity_export, rstd_distribution,
                        write_metrics_json, write_plot_data)
from .predictions import RSTD_CONVENTION, STD_CONVENTION, PredictionSet
from .seeding import derive_seed

log = logging.getLogger(__name__)

METHODS = ("ensemble", "bnn", "dgp")
BASES = (BaseModelKind.NO_BASE, BaseModelKind.BIASI, BaseModelKind.BOWRING)
SCENARIOS = ("plentiful", "limited")
COMPARISON_HEADER = ["method", "base", "scenario", "mu_error_pct", "max_error_pct", "mean_rstd_pct",
                     "max_rstd_pct", "rrmse_pct", "f_gt10_pct", "r2"]
MAX_HBM_FAILURE_FRACTION = 0.01


@dataclass(frozen=True)
class HybridSample:
    record: ChfRecord
    base_estimate: float
    residual: float
    predicted_residual: Optional[float] = None
    final_prediction: Optional[float] = None

    def with_prediction(self, predicted_residual: float) -> "HybridSample":
        return replace(self, predicted_residual=predicted_residual,
                       final_prediction=self.base_estimate + predicted_residual)


# --------------------------------------------------------------------------
# Base estimates
# --------------------------------------------------------------------------

def record_hash(record: ChfRecord) -> str:
    payload = ",".join(repr(float(getattr(record, f.name))) if getattr(record, f.name) is not None else ""
                       for f in fields(record))
    return hashlib.sha256(payload.encode()).hexdigest()[:32]


def dataset_hash(records: Sequence[ChfRecord]) -> str:
    h = hashlib.sha256()
    for r in records:
        h.update(record_hash(r).encode())
    return h.hexdigest()


class HbmCache:
    """Base-model estimates keyed by (correlation, record content hash)."""

    def __init__(self, path=None):
        self._store: dict[str, float] = {}
        self._lock = threading.Lock()
        self.path = Path(path) if path else None
        if self.path and self.path.exists():
            self._store.update(json.loads(self.path.read_text()))

    def __len__(self):
        return len(self._store)

    def estimates(self, kind, records: Sequence[ChfRecord]):
        """``(chf array, failed indices)``; unsolved records are NaN and never cached."""
        kind = BaseModelKind(kind)
        keys = [f"{kind.value}:{record_hash(r)}" for r in records]
        with self._lock:
            missing = [i for i, k in enumerate(keys) if k not in self._store]
        if missing:
            res = hbm_solve_many(kind, [records[i] for i in missing])
            with self._lock:
                for i, q in zip(missing, res.chf):
                    if np.isfinite(q):
                        self._store.setdefault(keys[i], float(q))
        with self._lock:
            out = np.array([self._store.get(k, np.nan) for k in keys])
        return out, np.flatnonzero(~np.isfinite(out)).tolist()

    def save(self, path=None):
        target = Path(path or self.path)
        tmp = target.with_suffix(".tmp")
        tmp.write_text(json.dumps(self._store, sort_keys=True))
        os.replace(tmp, target)


def base_estimates(records: Sequence[ChfRecord], base, cache: Optional[HbmCache] = None) -> np.ndarray:
    """Per-record base CHF (0 for NoBase); aborts when more than 1% of records fail."""
    base = BaseModelKind(base)
    if base is BaseModelKind.NO_BASE:
        return np.zeros(len(records))
    est, failed = (cache or HbmCache()).estimates(base, records)
    if failed:
        msg = f"{len(failed)} of {len(records)} records unsolved by {base.value}: indices {failed[:20]}"
        if len(failed) > MAX_HBM_FAILURE_FRACTION * len(records):
            raise ValueError(msg)
        log.warning(msg)
    return est


def make_residual_dataset(records: Sequence[ChfRecord], base, cache: Optional[HbmCache] = None):
    est = base_estimates(records, base, cache)
    return [HybridSample(r, float(e), float(r.chf - e)) for r, e in zip(records, est)]


def solvable_records(records: Sequence[ChfRecord], bases=BASES, cache: Optional[HbmCache] = None):
    """Drop records any base correlation cannot solve, keeping order."""
    cache = cache or HbmCache()
    keep = np.ones(len(records), dtype=bool)
    for base in map(BaseModelKind, bases):
        if base is not BaseModelKind.NO_BASE:
            keep &= np.isfinite(cache.estimates(base, records)[0])
    return [r for r, k in zip(records, keep) if k]


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    method: str = "ensemble"
    base: str = "biasi"
    scenario: str = "plentiful"
    master_seed: int = 0
    scaler_scope: str = "full"
    limited_n: int = 9
    # shared optimizer settings
    lr0: float = 1e-3
    decay_rate: float = 0.96
    decay_epochs: int = 1
    batch_size: int = 64
    # ensemble
    n_members: int = 20
    ensemble_hidden: tuple = (64,) * 7
    ensemble_epochs: int = 250
    activation: str = "swish"
    # bnn
    bnn_hidden: tuple = (64,) * 4
    bnn_epochs: int = 500
    bnn_samples: int = 200
    bnn_kl_weight: float = 1.0
    # dgp
    dgp_epochs: int = 500
    n_inducing: int = 128
    dgp_mc_train: int = 5
    dgp_mc_predict: int = 50

    def __post_init__(self):
        object.__setattr__(self, "base", BaseModelKind(self.base).value)
        object.__setattr__(self, "ensemble_hidden", tuple(int(w) for w in self.ensemble_hidden))
        object.__setattr__(self, "bnn_hidden", tuple(int(w) for w in self.bnn_hidden))
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.scaler_scope not in ("full", "train-only"):
            raise ConfigError(f"scaler_scope must be 'full' or 'train-only', got {self.scaler_scope!r}")

    @property
    def run_id(self) -> str:
        return f"{self.method}-{self.base}-{self.scenario}"

    def seeds(self) -> dict:
        m = self.master_seed
        return {
            "split": derive_seed(m, "shuffle"),
            "members": derive_seed(m, "member"),
            "bnn_init": derive_seed(m, "bnn-init"),
            "dgp_init": derive_seed(m, "dgp-init"),
            "train_order": derive_seed(m, "train-order"),
            "sampling": derive_seed(m, "sampling"),
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ensemble_hidden"] = list(self.ensemble_hidden)
        d["bnn_hidden"] = list(self.bnn_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**d)

    def train_config(self, epochs: int):
        from .nncore import TrainConfig
        return TrainConfig(epochs=epochs, lr0=self.lr0, decay_rate=self.decay_rate,
                           decay_epochs=self.decay_epochs, batch_size=self.batch_size,
                           seed=self.seeds()["train_order"])


def suite_configs(template: ExperimentConfig) -> list:
    """All method x base x scenario combinations sharing ``template``'s settings."""
    return [replace(template, method=m, base=b.value, scenario=s)
            for m in METHODS for b in BASES for s in SCENARIOS]


# --------------------------------------------------------------------------
# Backends
# --------------------------------------------------------------------------

# A backend trains on standardized features and standardized targets and
# returns a predictor mapping standardized features to a PredictionSet in
# physical target units (the ``scaler``'s inverse applied).
Backend = Callable[..., Callable[[np.ndarray], PredictionSet]]


def ensemble_backend(cfg: ExperimentConfig, x, y, x_val, y_val, scaler, artifacts: dict):
    from .ensemble import predict_ensemble, train_ensemble
    from .nncore import MlpConfig

    mlp = MlpConfig(cfg.ensemble_hidden, cfg.activation, x.shape[1], 1)
    model = train_ensemble(mlp, cfg.train_config(cfg.ensemble_epochs), x, y, scaler,
                           base_seed=cfg.seeds()["members"], n_members=cfg.n_members,
                           x_val=x_val, y_val=y_val, base=cfg.base)
    artifacts.update(model=model, history=model.history, n_members=model.n_members,
                     member_seeds=model.member_seeds)
    return lambda xs: predict_ensemble(model, xs)


def bnn_backend(cfg: ExperimentConfig, x, y, x_val, y_val, scaler, artifacts: dict):
    from .bnn import bnn_config, bnn_init, bnn_predict, bnn_train

    model = bnn_init(bnn_config(x.shape[1], cfg.bnn_hidden, cfg.activation, cfg.seeds()["bnn_init"]),
                     scaler, base=cfg.base)
    model = bnn_train(model, x, y, cfg.train_config(cfg.bnn_epochs), x_val, y_val,
                      kl_weight=cfg.bnn_kl_weight)
    artifacts.update(model=model, history=model.history, posterior_samples=cfg.bnn_samples,
                     likelihood_noise_in_samples=True)
    return lambda xs: bnn_predict(model, xs, cfg.bnn_samples, cfg.seeds()["sampling"])


def dgp_backend(cfg: ExperimentConfig, x, y, x_val, y_val, scaler, artifacts: dict):
    from .dgp import build_dgp, dgp_predict, dgp_train

    model = build_dgp(x, 2, cfg.n_inducing, cfg.seeds()["dgp_init"])
    model.scaler = scaler
    model.base = BaseModelKind(cfg.base)
    dgp_train(model, x, y, cfg.train_config(cfg.dgp_epochs), x_val, y_val, cfg.dgp_mc_train)
    artifacts.update(model=model, history=model.history,
                     n_inducing=[layer.n_inducing for layer in model.layers])
    return lambda xs: dgp_predict(model, xs, cfg.dgp_mc_predict, cfg.seeds()["sampling"])


BACKENDS = {"ensemble": ensemble_backend, "bnn": bnn_backend, "dgp": dgp_backend}


# --------------------------------------------------------------------------
# Experiments
# --------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    config: ExperimentConfig
    test_idx: np.ndarray
    y_true: np.ndarray
    base_estimate: np.ndarray
    residual_prediction: PredictionSet
    prediction: PredictionSet
    metrics: MetricsReport
    manifest: dict
    calibration: object = None
    artifacts: dict = field(default_factory=dict)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:  # tagged and re-raised for the caller
        raise StageError(name, exc) from exc


def _inputs_hash(ds_hash: str, cfg: ExperimentConfig, split: DatasetSplit) -> str:
    h = hashlib.sha256()
    h.update(ds_hash.encode())
    h.update(json.dumps(cfg.to_dict(), sort_keys=True).encode())
    for idx in (split.train_idx, split.val_idx, split.test_idx):
        h.update(np.asarray(idx, dtype=np.int64).tobytes())
    return h.hexdigest()


def run_experiment(cfg: ExperimentConfig, records: Sequence[ChfRecord], split: DatasetSplit,
                   backend: Optional[Backend] = None, cache: Optional[HbmCache] = None,
                   base_est: Optional[np.ndarray] = None, out_dir=None, svg: bool = False) -> ExperimentResult:
    """Train one configuration on ``split`` and evaluate it on the test partition."""
    records = list(records)
    if base_est is None:
        base_est = _stage("base", base_estimates, records, cfg.base, cache)
    base_est = np.asarray(base_est, dtype=float)
    y = np.array([r.chf for r in records])
    residual = y - base_est

    used = _stage("split", limit_train, split, cfg.limited_n) if cfg.scenario == "limited" else split
    scaler = _stage("scale", fit_scaler, records, FEATURES, cfg.scaler_scope, used, residual,
                    "chf" if cfg.base == "none" else "residual")
    x = scaler.transform(feature_matrix(records))
    z = scaler.transform_target(residual)

    artifacts: dict = {}
    fit = backend or BACKENDS[cfg.method]
    predictor = _stage("train", fit, cfg, x[used.train_idx], z[used.train_idx],
                       x[used.val_idx], z[used.val_idx], scaler, artifacts)
    test = used.test_idx
    r_pred = _stage("predict", predictor, x[test])
    final = r_pred.shifted(base_est[test])

    y_test = y[test]
    report = _stage("evaluate", metrics, y_test, final)
    calib = None
    calib_note = "computed"
    if np.all(final.std > 0):
        calib = _stage("evaluate", calibration_curve, y_test, final)
    else:
        calib_note = "skipped: zero predictive std at some test points"

    ds_hash = dataset_hash(records)
    manifest = {
        "run_id": cfg.run_id,
        "config": cfg.to_dict(),
        "seeds": cfg.seeds(),
        "scaler_scope": cfg.scaler_scope,
        "residual_targets_standardized": True,
        "std_convention": STD_CONVENTION,
        "rstd_convention": RSTD_CONVENTION,
        "dataset_hash": ds_hash,
        "inputs_hash": _inputs_hash(ds_hash, cfg, used),
        "split_seed": int(split.seed),
        "n_train": int(len(used.train_idx)),
        "n_val": int(len(used.val_idx)),
        "n_test": int(len(test)),
        "test_idx_hash": hashlib.sha256(np.asarray(test, np.int64).tobytes()).hexdigest(),
        "metrics": report.to_dict(),
        "miscalibration_area": None if calib is None else calib.miscalibration_area,
        "calibration": calib_note,
    }
    for key in ("n_members", "member_seeds", "posterior_samples", "likelihood_noise_in_samples",
                "n_inducing"):
        if key in artifacts:
            manifest[key] = artifacts[key]

    result = ExperimentResult(cfg, np.asarray(test), y_test, base_est[test], r_pred, final, report,
                              manifest, calib, artifacts)
    if out_dir is not None:
        _stage("export", write_run, result, records, scaler, out_dir, svg)
    return result


def write_run(result: ExperimentResult, records, scaler: StandardScaler, out_dir, svg=False) -> Path:
    run_dir = Path(out_dir) / result.config.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    test = result.test_idx
    (run_dir / "manifest.json").write_text(json.dumps(result.manifest, indent=2, sort_keys=True) + "\n")
    write_metrics_json(result.metrics, run_dir / "metrics.json",
                       {"method": result.config.method, "base": result.config.base,
                        "scenario": result.config.scenario, "std_convention": STD_CONVENTION,
                        "miscalibration_area": result.manifest["miscalibration_area"]})
    result.prediction.to_csv(run_dir / "predictions.csv", result.y_true, test)
    scaler.to_json(run_dir / "scaler.json")
    pressures = np.array([records[i].pressure for i in test])
    parity = parity_export(result.y_true, result.prediction, point_ids=test, pressures=pressures)
    write_plot_data(run_dir, result.calibration, rstd_distribution(result.prediction), parity, svg)
    hist = result.artifacts.get("history")
    if hist is not None:
        hist.to_csv(run_dir / "loss_history.csv")
    model = result.artifacts.get("model")
    if model is not None:
        if result.config.method == "dgp":
            from .dgp import save_dgp
            save_dgp(model, run_dir / "model")
        else:
            model.save(run_dir / "model")
    return run_dir


# --------------------------------------------------------------------------
# Suites
# --------------------------------------------------------------------------

@dataclass
class SuiteResult:
    results: list
    failures: dict
    manifest: dict


def comparison_row(cfg: ExperimentConfig, report: MetricsReport) -> list:
    d = report.to_dict()
    return [cfg.method, cfg.base, cfg.scenario] + [d[k] for k in MetricsReport.field_names()]


def write_comparison(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COMPARISON_HEADER)
        for row in rows:
            w.writerow(row[:3] + [repr(float(v)) for v in row[3:]])


def _run_one(args):
    cfg, records, split, base_est, out_dir, backend, svg = args
    try:
        return run_experiment(cfg, records, split, backend, base_est=base_est, out_dir=out_dir, svg=svg), None
    except StageError as exc:
        return None, str(exc)


def run_suite(records: Sequence[ChfRecord], split: DatasetSplit, template: ExperimentConfig = ExperimentConfig(),
              out_dir=None, workers: int = 1, backend: Optional[Backend] = None,
              cache: Optional[HbmCache] = None, configs=None, svg: bool = False) -> SuiteResult:
    """Run every method x base x scenario on one shared split.

    Failures are recorded per run and do not stop the suite. Results are
    ordered by configuration regardless of ``workers``.
    """
    records = list(records)
    configs = configs or suite_configs(template)
    cache = cache or HbmCache()
    estimates = {b: base_estimates(records, b, cache) for b in {c.base for c in configs}}
    jobs = [(c, records, split, estimates[c.base], out_dir, backend, svg) for c in configs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_one, jobs))
    else:
        outcomes = [_run_one(j) for j in jobs]
    results, failures, runs = [], {}, []
    for cfg, (res, err) in zip(configs, outcomes):
        if err is not None:
            failures[cfg.run_id] = err
            log.error("run %s failed: %s", cfg.run_id, err)
            runs.append({"run_id": cfg.run_id, "status": "failed", "error": err})
            continue
        results.append(res)
        runs.append({"run_id": cfg.run_id, "status": "ok", "inputs_hash": res.manifest["inputs_hash"],
                     "test_idx_hash": res.manifest["test_idx_hash"], "metrics": res.manifest["metrics"]})
    manifest = {"template": template.to_dict(), "dataset_hash": dataset_hash(records),
                "split_seed": split.seed, "n_runs": len(configs), "runs": runs}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "suite_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        write_comparison([comparison_row(r.config, r.metrics) for r in results], out / "comparison.csv")
    return SuiteResult(results, failures, manifest)
