"""Batch command line: ``chf-hybrid {prepare,train,suite,report,synth}``.

Exit codes: 0 ok, 1 file I/O, 2 schema/parse, 3 validation/config,
4 experiment stage failure, 5 missing runs.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .correlations import BaseModelKind
from .dataset import (BWR_PRESSURE, FilterCriteria, DatasetSplit, filter_do, fit_scaler, load_csv,
                      removal_counts, shuffle_split, synth_generate, write_csv)
from .errors import ChfError, ConfigError, ParseError, SchemaError, StageError
from .evalsuite import read_parity_csv
from .hybrid import (COMPARISON_HEADER, ExperimentConfig, HbmCache, run_experiment, run_suite,
                     solvable_records, write_comparison)
from .seeding import derive_seed

log = logging.getLogger("chf_hybrid")

EXIT_IO, EXIT_SCHEMA, EXIT_VALIDATION, EXIT_STAGE, EXIT_MISSING = 1, 2, 3, 4, 5
OUT_ENV = "CHF_HYBRID_OUT"
DEFAULT_OUT = "chf_runs"

_EXPERIMENT_KEYS = {"method", "base", "scenario", "scaler_scope", "limited_n"}
_SEED_KEYS = {"master_seed"}
_FIELD_TYPES = {f.name: type(f.default) for f in dataclasses.fields(ExperimentConfig)}
SECTIONS = {
    "dataset": {"prepared"},
    "experiment": _EXPERIMENT_KEYS,
    "seeds": _SEED_KEYS,
    "hyperparameters": set(_FIELD_TYPES) - _EXPERIMENT_KEYS - _SEED_KEYS,
    "output": {"dir", "svg"},
    "suite": {"workers"},
}


class MissingRunsError(ChfError):
    pass


def default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT))


# --------------------------------------------------------------------------
# Run configuration files
# --------------------------------------------------------------------------

def _convert(key, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind is tuple:
            return tuple(int(v) for v in raw.replace(",", " ").split())
        if kind is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return kind(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def read_run_config(path):
    """Parse a key=value run file into ``(ExperimentConfig, settings dict)``.

    Unknown sections or keys are rejected.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    text = Path(path).read_text()
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    values, settings = {}, {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            if section in ("dataset", "output", "suite"):
                settings[key] = raw.strip()
            else:
                values[key] = _convert(key, raw)
    base_dir = Path(path).resolve().parent
    if "prepared" in settings:
        settings["prepared"] = str((base_dir / settings["prepared"]).resolve())
    return ExperimentConfig(**values), settings


def write_run_config(cfg: ExperimentConfig, path, prepared=None, out_dir=None):
    """Inverse of :func:`read_run_config` (handy for replaying a manifest)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    d = cfg.to_dict()
    if prepared:
        parser["dataset"] = {"prepared": str(prepared)}
    parser["experiment"] = {k: str(d[k]) for k in sorted(_EXPERIMENT_KEYS)}
    parser["seeds"] = {"master_seed": str(cfg.master_seed)}
    parser["hyperparameters"] = {
        k: ",".join(map(str, d[k])) if isinstance(d[k], list) else str(d[k])
        for k in sorted(SECTIONS["hyperparameters"])}
    if out_dir:
        parser["output"] = {"dir": str(out_dir)}
    with open(path, "w") as fh:
        parser.write(fh)


def _load_prepared(settings):
    if "prepared" not in settings:
        raise ConfigError("run config needs [dataset] prepared = <directory from 'prepare'>")
    d = Path(settings["prepared"])
    return load_csv(d / "filtered.csv"), DatasetSplit.from_json(d / "split.json")


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_prepare(args) -> int:
    records = load_csv(args.input)
    criteria = FilterCriteria()
    log.info("filter criteria:")
    for line in criteria.describe():
        log.info("  %s", line)
    counts = removal_counts(records, criteria)
    kept = filter_do(records, criteria)
    for label, n in counts.items():
        print(f"removed by {label}: {n}")
    solvable = solvable_records(kept)
    if len(solvable) != len(kept):
        print(f"removed as unsolvable by a base correlation: {len(kept) - len(solvable)}")
    print(f"kept: {len(solvable)} of {len(records)}")
    out = Path(args.out) if args.out else default_out() / "prepared"
    out.mkdir(parents=True, exist_ok=True)
    split = shuffle_split(solvable, seed=derive_seed(args.seed, "shuffle"))
    write_csv(solvable, out / "filtered.csv")
    split.to_json(out / "split.json")
    fit_scaler(solvable, scope=args.scaler_scope, split=split).to_json(out / "scaler.json")
    print(f"train/val/test sizes: {split.sizes}; written to {out}")
    return 0


def cmd_train(args) -> int:
    cfg, settings = read_run_config(args.config)
    records, split = _load_prepared(settings)
    out = Path(args.out or settings.get("dir") or default_out())
    res = run_experiment(cfg, records, split, out_dir=out, svg=args.svg or settings.get("svg") == "true")
    m = res.manifest
    print(f"{cfg.run_id}: n_train={m['n_train']} mu_error={res.metrics.mu_error:.3f}% "
          f"r2={res.metrics.r2:.4f} -> {out / cfg.run_id}")
    return 0


def cmd_suite(args) -> int:
    cfg, settings = read_run_config(args.config)
    records, split = _load_prepared(settings)
    out = Path(args.out or settings.get("dir") or default_out())
    workers = args.workers or int(settings.get("workers", 0)) or (os.cpu_count() or 1)
    suite = run_suite(records, split, cfg, out_dir=out, workers=workers,
                      cache=HbmCache(), svg=args.svg)
    print(f"suite: {len(suite.results)} of {suite.manifest['n_runs']} runs ok -> {out}")
    for run_id, err in suite.failures.items():
        print(f"  FAILED {run_id}: {err}", file=sys.stderr)
    return EXIT_STAGE if suite.failures else 0


def _collect_runs(root: Path):
    runs = sorted(p.parent for p in root.glob("*/metrics.json"))
    expected = []
    manifest = root / "suite_manifest.json"
    if manifest.exists():
        expected = [r["run_id"] for r in json.loads(manifest.read_text())["runs"]]
    missing = sorted(set(expected) - {p.name for p in runs})
    if missing or not runs:
        raise MissingRunsError("missing runs: " + (", ".join(missing) if missing else f"none found in {root}"))
    return runs


def cmd_report(args) -> int:
    root = Path(args.runs)
    if not root.is_dir():
        raise FileNotFoundError(f"runs directory not found: {root}")
    runs = _collect_runs(root)
    rows = []
    for run in runs:
        m = json.loads((run / "metrics.json").read_text())
        rows.append([m["method"], m["base"], m["scenario"]] +
                    [m[k] for k in ("mu_error", "max_error", "mean_rstd", "max_rstd", "rrmse", "f_gt10", "r2")])
    out = Path(args.out) if args.out else root
    out.mkdir(parents=True, exist_ok=True)
    write_comparison(rows, out / "comparison.csv")
    print(",".join(COMPARISON_HEADER))
    for r in rows:
        print(",".join(str(v) if i < 3 else f"{v:.4f}" for i, v in enumerate(r)))
    if args.bwr_filter:
        lo, hi = BWR_PRESSURE
        for run in runs:
            table = read_parity_csv(run / "parity.csv")
            keep = (table.pressure >= lo) & (table.pressure <= hi)
            sub = table.subset(keep)
            sub.to_csv(run / "parity_bwr.csv", run / "parity_bwr_lines.csv")
            print(f"{run.name}: BWR filter kept {len(sub)} of {len(table)} parity points")
    return 0


def cmd_synth(args) -> int:
    records = synth_generate(args.n, args.seed, BaseModelKind(args.base), args.noise)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(records, out)
    print(f"wrote {len(records)} synthetic records to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chf-hybrid", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prepare", help="filter, split and standardize a CHF CSV")
    s.add_argument("--input", required=True)
    s.add_argument("--criteria", default="defaults", choices=["defaults"])
    s.add_argument("--seed", type=int, default=0, help="master seed")
    s.add_argument("--scaler-scope", default="full", choices=["full", "train-only"])
    s.add_argument("--out")
    s.set_defaults(func=cmd_prepare)

    for name, func, help_ in (("train", cmd_train, "run one experiment"),
                              ("suite", cmd_suite, "run all 18 method/base/scenario experiments")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True)
        s.add_argument("--out")
        s.add_argument("--svg", action="store_true", help="also render SVG plots")
        if name == "suite":
            s.add_argument("--workers", type=int, default=0, help="worker processes (default: cores)")
        s.set_defaults(func=func)

    s = sub.add_parser("report", help="comparison table across finished runs")
    s.add_argument("--runs", required=True)
    s.add_argument("--bwr-filter", action="store_true",
                   help=f"also export parity data for {BWR_PRESSURE[0]}-{BWR_PRESSURE[1]} MPa")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("synth", help="generate a synthetic dataset from a base correlation")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--base", default="biasi", choices=["biasi", "bowring"])
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MissingRunsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (SchemaError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ChfError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
