"""Seed-diverse committees of identical MLPs.

Members differ only in their initialization (and batch-order) seed. Their
de-standardized outputs are treated as samples of a predictive distribution;
the committee mean is the point prediction and the population standard
deviation over members is the uncertainty.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .correlations import BaseModelKind
from .dataset import StandardScaler
from .errors import ConfigError, DivergenceError, EnsembleError, SizeError
from .nncore import History, MlpConfig, MlpParams, TrainConfig, forward_stack, mlp_init, train
from .predictions import PredictionSet

N_MEMBERS = 20


@dataclass
class EnsembleModel:
    params: MlpParams  # all members stacked
    scaler: StandardScaler
    base: BaseModelKind = BaseModelKind.NO_BASE
    history: Optional[History] = None

    @property
    def member_seeds(self) -> list:
        return list(self.params.seeds)

    @property
    def n_members(self) -> int:
        return self.params.n_members

    @property
    def members(self) -> list:
        return [self.params.member(k) for k in range(self.n_members)]

    def save(self, directory):
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        self.params.save(out / "members.npz", base=BaseModelKind(self.base).value)
        self.scaler.to_json(out / "scaler.json")

    @classmethod
    def load(cls, directory) -> "EnsembleModel":
        d = Path(directory)
        params = MlpParams.load(d / "members.npz")
        with np.load(d / "members.npz") as z:
            base = json.loads(str(z["meta"])).get("base", "none")
        return cls(params, StandardScaler.from_json(d / "scaler.json"), BaseModelKind(base))


def member_seeds(base_seed: int, n_members: int = N_MEMBERS) -> list:
    return [int(base_seed) + i for i in range(n_members)]


def train_ensemble(config: MlpConfig, tc: TrainConfig, x_train, y_train, scaler: StandardScaler,
                   base_seed: int = 0, n_members: int = N_MEMBERS, x_val=None, y_val=None,
                   base=BaseModelKind.NO_BASE, seeds: Optional[Sequence[int]] = None,
                   mode: str = "stacked") -> EnsembleModel:
    """Train ``n_members`` networks on standardized data; member ``i`` uses ``base_seed + i``.

    ``mode="stacked"`` advances all members in one vectorized loop;
    ``mode="serial"`` trains them one after another. Both give identical
    parameters because members never share state.
    """
    seeds = member_seeds(base_seed, n_members) if seeds is None else [int(s) for s in seeds]
    if len(seeds) < 2:
        raise SizeError("an ensemble needs at least two members")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"member seeds must be pairwise distinct, got {seeds}")
    if len(x_train) == 0:
        raise SizeError("training set is empty")

    if mode == "stacked":
        try:
            params, hist = train(mlp_init(config, seeds), x_train, y_train, tc, x_val, y_val)
        except DivergenceError as exc:
            raise EnsembleError(f"members {exc.members} diverged at epoch {exc.epoch}",
                                exc.members) from exc
    elif mode == "serial":
        trained, hists, failed = [], [], []
        for k, seed in enumerate(seeds):
            try:
                p, h = train(mlp_init(config, [seed]), x_train, y_train, tc, x_val, y_val)
            except DivergenceError:
                failed.append(k)
                continue
            trained.append(p)
            hists.append(h)
        if failed:
            raise EnsembleError(f"members {failed} diverged", failed)
        params = MlpParams.stack(trained)
        hist = History(np.concatenate([h.train_loss for h in hists]),
                       np.concatenate([h.val_loss for h in hists]), hists[0].lr)
    else:
        raise ConfigError(f"unknown training mode {mode!r}")
    return EnsembleModel(params, scaler, BaseModelKind(base), hist)


def member_outputs(model: EnsembleModel, inputs) -> np.ndarray:
    """Standardized member outputs, shape ``(n_points, n_members)``."""
    x = np.asarray(inputs, dtype=float)
    width = len(model.scaler.feature_names)
    if x.ndim != 2 or x.shape[1] != width or width != model.params.config.input_dim:
        raise ConfigError(f"inputs of shape {x.shape} do not match the model's scaler "
                          f"({width} features)")
    p = model.params
    out = forward_stack(p.weights, p.biases, x, p.config.activation)
    return out[..., 0].T


def predict_ensemble(model: EnsembleModel, inputs) -> PredictionSet:
    """Committee predictions in physical units for standardized ``inputs``."""
    z = member_outputs(model, inputs)
    return PredictionSet.from_samples(model.scaler.inverse_target(z))
