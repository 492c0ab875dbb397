"""Hybrid physics + ML critical heat flux prediction with uncertainty quantification."""
from .correlations import BaseModelKind, ChfRecord, biasi_chf, bowring_chf, hbm_solve, hbm_solve_many
from .dataset import load_csv, shuffle_split, synth_generate
from .evalsuite import calibration_curve, metrics
from .hybrid import ExperimentConfig, run_experiment, run_suite
from .predictions import PredictionSet

__version__ = "0.1.0"
