"""Mean-field variational Bayesian MLP with a heteroscedastic Gaussian head.

Every weight and bias has a factorized Gaussian posterior ``N(mu, softplus(rho)^2)``
against a standard-normal prior. The head emits a mean and a raw scale per
point; ``scale = softplus(raw) + scale_floor``. Training minimizes

    mean_batch NLL + kl_weight * KL(q || p) / n_total

with one reparameterized weight draw per step. Gradients are computed by
backpropagating through the sampled network (shared with :mod:`nncore`) and
then applying the chain rule through ``w = mu + softplus(rho) * eps``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .correlations import BaseModelKind
from .dataset import StandardScaler
from .errors import ConfigError, DivergenceError, ShapeError, SizeError
from .nncore import Adam, MlpConfig, TrainConfig, backward_stack, forward_stack, layer_views, n_params, shuffle_rng
from .predictions import PredictionSet

SCALE_FLOOR = 1e-4
INIT_STD = 0.05
HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def softplus(x):
    return np.logaddexp(0.0, x)


def inverse_softplus(y):
    return y + np.log(-np.expm1(-y))


def bnn_config(input_dim: int = 5, hidden_widths=(64,) * 4, activation: str = "swish",
               seed: int = 0) -> MlpConfig:
    return MlpConfig(tuple(hidden_widths), activation, input_dim, 2, seed)


def kl_gaussian(post_mean, post_std, prior_mean=0.0, prior_std=1.0) -> float:
    """KL(N(post) || N(prior)) summed over independent coordinates."""
    mq = np.asarray(post_mean, dtype=float)
    sq = np.asarray(post_std, dtype=float)
    sp = np.asarray(prior_std, dtype=float)
    if np.any(sq <= 0) or np.any(sp <= 0):
        raise ValueError("standard deviations must be positive")
    return float(np.sum(np.log(sp / sq) + (sq**2 + (mq - prior_mean) ** 2) / (2 * sp**2) - 0.5))


@dataclass
class BnnHistory:
    nll: list = field(default_factory=list)
    kl: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("epoch,train_loss,val_loss,lr,nll,kl\n")
            for e, row in enumerate(zip(self.loss, self.val_loss, self.lr, self.nll, self.kl)):
                fh.write(f"{e}," + ",".join(repr(float(v)) for v in row) + "\n")


@dataclass
class BnnModel:
    config: MlpConfig
    mu: np.ndarray  # (P,)
    rho: np.ndarray  # (P,)
    scaler: Optional[StandardScaler] = None
    base: BaseModelKind = BaseModelKind.NO_BASE
    scale_floor: float = SCALE_FLOOR
    freeze_scale: bool = False
    history: Optional[BnnHistory] = None

    def __post_init__(self):
        if self.config.output_dim != 2:
            raise ConfigError("the BNN head must output exactly (mean, raw_scale)")
        p = n_params(self.config.layer_sizes)
        self.mu = np.asarray(self.mu, dtype=float).reshape(p)
        self.rho = np.asarray(self.rho, dtype=float).reshape(p)

    @property
    def sigma(self) -> np.ndarray:
        return softplus(self.rho)

    def copy(self) -> "BnnModel":
        return BnnModel(self.config, self.mu.copy(), self.rho.copy(), self.scaler, self.base,
                        self.scale_floor, self.freeze_scale, self.history)

    def save(self, directory):
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        meta = {"config": asdict(self.config), "scale_floor": self.scale_floor,
                "freeze_scale": self.freeze_scale, "base": BaseModelKind(self.base).value}
        np.savez(out / "bnn.npz", mu=self.mu, rho=self.rho, meta=np.array(json.dumps(meta)))
        if self.scaler is not None:
            self.scaler.to_json(out / "scaler.json")

    @classmethod
    def load(cls, directory) -> "BnnModel":
        d = Path(directory)
        with np.load(d / "bnn.npz") as z:
            meta = json.loads(str(z["meta"]))
            mu, rho = z["mu"], z["rho"]
        cfg = meta["config"]
        cfg["hidden_widths"] = tuple(cfg["hidden_widths"])
        scaler = StandardScaler.from_json(d / "scaler.json") if (d / "scaler.json").exists() else None
        return cls(MlpConfig(**cfg), mu, rho, scaler, BaseModelKind(meta["base"]),
                   meta["scale_floor"], meta["freeze_scale"])


def bnn_init(config: MlpConfig, scaler: Optional[StandardScaler] = None, init_std: float = INIT_STD,
             base=BaseModelKind.NO_BASE, freeze_scale: bool = False) -> BnnModel:
    """Posterior means at a tenth of a Glorot-uniform draw, zero bias means, std ``init_std``."""
    rng = np.random.default_rng(config.seed)
    sizes = config.layer_sizes
    mu = np.zeros((1, n_params(sizes)))
    weights, _ = layer_views(mu, sizes)
    for w in weights:
        bound = math.sqrt(6.0 / (w.shape[1] + w.shape[2]))
        w[...] = rng.uniform(-bound, bound, size=w.shape) / 10.0
    rho = np.full(mu.shape[1], inverse_softplus(init_std))
    return BnnModel(config, mu[0], rho, scaler, BaseModelKind(base), SCALE_FLOOR, freeze_scale)


def _head(out, scale_floor, freeze_scale):
    mean = out[..., 0]
    raw = out[..., 1]
    scale = np.ones_like(raw) if freeze_scale else softplus(raw) + scale_floor
    return mean, raw, scale


def elbo_loss(model: BnnModel, x, y, n_total: int, eps: Optional[np.ndarray] = None,
              rng: Optional[np.random.Generator] = None, kl_weight: float = 1.0):
    """Negative ELBO on a batch and its gradients w.r.t. ``mu`` and ``rho``.

    ``eps`` fixes the reparameterization noise (one standard-normal value per
    parameter); otherwise it is drawn from ``rng``. Returns
    ``(loss, nll, kl_term, grad_mu, grad_rho)`` where ``kl_term`` is already
    scaled by ``kl_weight / n_total``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(x) == 0:
        raise SizeError("elbo_loss on an empty batch")
    if len(y) != len(x):
        raise ShapeError("inputs and targets differ in length")
    if eps is None:
        eps = (rng or np.random.default_rng()).standard_normal(model.mu.shape)
    sigma = softplus(model.rho)
    w = (model.mu + sigma * eps)[None, :]
    weights, biases = layer_views(w, model.config.layer_sizes)
    cache = []
    out = forward_stack(weights, biases, x, model.config.activation, cache)[0]
    mean, raw, scale = _head(out, model.scale_floor, model.freeze_scale)
    resid = y - mean
    n = len(y)
    nll_points = HALF_LOG_2PI + np.log(scale) + 0.5 * (resid / scale) ** 2
    nll = float(nll_points.mean())
    mq2 = model.mu**2
    kl_raw = float(np.sum(-np.log(sigma) + 0.5 * (sigma**2 + mq2) - 0.5))
    kl_term = kl_weight * kl_raw / n_total
    loss = nll + kl_term
    if not math.isfinite(loss):
        raise DivergenceError("non-finite ELBO")

    g_out = np.zeros((1, n, 2))
    g_out[0, :, 0] = -resid / scale**2 / n
    if not model.freeze_scale:
        g_out[0, :, 1] = (1.0 / scale - resid**2 / scale**3) * expit(raw) / n
    gw = np.empty_like(w)
    gws, gbs = layer_views(gw, model.config.layer_sizes)
    backward_stack(weights, cache, g_out, gws, gbs)
    gw = gw[0]
    c = kl_weight / n_total
    grad_mu = gw + c * model.mu
    grad_rho = (gw * eps + c * (sigma - 1.0 / sigma)) * expit(model.rho)
    return loss, nll, kl_term, grad_mu, grad_rho


def _val_nll(model, x, y):
    w = model.mu[None, :]
    weights, biases = layer_views(w, model.config.layer_sizes)
    out = forward_stack(weights, biases, x, model.config.activation)[0]
    mean, _, scale = _head(out, model.scale_floor, model.freeze_scale)
    return float(np.mean(HALF_LOG_2PI + np.log(scale) + 0.5 * ((y - mean) / scale) ** 2))


def bnn_train(model: BnnModel, x_train, y_train, tc: TrainConfig, x_val=None, y_val=None,
              kl_weight: float = 1.0) -> BnnModel:
    """Adam on the negative ELBO with the same decay schedule as :func:`nncore.train`.

    Returns a trained copy; the NLL and KL parts are logged separately per epoch.
    """
    x = np.asarray(x_train, dtype=float)
    y = np.asarray(y_train, dtype=float).reshape(-1)
    if len(x) == 0:
        raise SizeError("training set is empty")
    model = model.copy()
    hist = BnnHistory()
    order_rng = shuffle_rng(tc.seed)
    noise_rng = np.random.default_rng([int(tc.seed), 0xB77])
    theta = np.stack([model.mu, model.rho])
    model.mu, model.rho = theta[0], theta[1]  # views: Adam updates the model in place
    opt = Adam(theta.shape)
    grad = np.empty_like(theta)
    n = len(x)
    bs = min(tc.batch_size, n)
    for epoch in range(tc.epochs):
        lr = tc.lr_at(epoch)
        perm = order_rng.permutation(n)
        tot = np.zeros(3)
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            try:
                loss, nll, kl, g_mu, g_rho = elbo_loss(model, x[idx], y[idx], n, rng=noise_rng,
                                                       kl_weight=kl_weight)
            except DivergenceError as exc:
                raise DivergenceError(f"non-finite ELBO at epoch {epoch}", epoch=epoch) from exc
            grad[0], grad[1] = g_mu, g_rho
            opt.step(theta, grad, lr)
            tot += np.array([loss, nll, kl]) * len(idx)
        if not np.all(np.isfinite(theta)):
            raise DivergenceError(f"non-finite parameters at epoch {epoch}", epoch=epoch)
        tot /= n
        hist.loss.append(tot[0])
        hist.nll.append(tot[1])
        hist.kl.append(tot[2])
        hist.lr.append(lr)
        hist.val_loss.append(_val_nll(model, np.asarray(x_val, float), np.asarray(y_val, float).reshape(-1))
                             if x_val is not None else float("nan"))
    model.mu, model.rho = theta[0].copy(), theta[1].copy()
    model.history = hist
    return model


def posterior_samples(model: BnnModel, inputs, n_samples: int = 200, seed: int = 0,
                      include_noise: bool = True, chunk: int = 50) -> np.ndarray:
    """Standardized posterior-predictive draws, shape ``(n_points, n_samples)``.

    Draw ``s`` uses its own generator seeded from ``(seed, s)``, so the first
    ``m`` draws of a larger request equal an ``m``-draw request.
    """
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.config.input_dim:
        raise ShapeError(f"expected inputs of shape (n, {model.config.input_dim}), got {x.shape}")
    sigma = softplus(model.rho)
    out = np.empty((len(x), n_samples))
    for start in range(0, n_samples, chunk):
        ids = range(start, min(start + chunk, n_samples))
        rngs = [np.random.default_rng([int(seed), s]) for s in ids]
        w = np.stack([model.mu + sigma * r.standard_normal(model.mu.shape) for r in rngs])
        weights, biases = layer_views(w, model.config.layer_sizes)
        o = forward_stack(weights, biases, x, model.config.activation)
        mean, _, scale = _head(o, model.scale_floor, model.freeze_scale)
        if include_noise:
            mean = mean + scale * np.stack([r.standard_normal(len(x)) for r in rngs])
        out[:, start:start + len(ids)] = mean.T
    return out


def bnn_predict(model: BnnModel, inputs, n_samples: int = 200, seed: int = 0,
                include_noise: bool = True) -> PredictionSet:
    """Posterior-predictive samples in physical units, aggregated per point."""
    if n_samples < 2:
        raise SizeError("need at least two posterior samples")
    z = posterior_samples(model, inputs, n_samples, seed, include_noise)
    if model.scaler is not None:
        z = model.scaler.inverse_target(z)
    return PredictionSet.from_samples(z)


@dataclass
class ConvergenceStudy:
    sizes: tuple
    means: np.ndarray  # (len(sizes), n_points)
    stds: np.ndarray

    def shift_pct(self, a: int, b: int) -> float:
        """Mean over points of the relative change in predicted mean between sample sizes."""
        ia, ib = self.sizes.index(a), self.sizes.index(b)
        return float(np.mean(100.0 * np.abs(self.means[ia] - self.means[ib]) / np.abs(self.means[ib])))

    def rows(self):
        out = []
        for i, n in enumerate(self.sizes):
            shift = self.shift_pct(self.sizes[i - 1], n) if i else float("nan")
            out.append({"n_samples": n, "mean_shift_pct": shift,
                        "mean_std": float(np.mean(self.stds[i]))})
        return out


def convergence_study(model: BnnModel, inputs, sizes: Sequence[int] = (10, 50, 100, 200, 400),
                      seed: int = 0) -> ConvergenceStudy:
    """Predicted means and stds for nested posterior sample counts."""
    sizes = tuple(sorted(int(s) for s in sizes))
    z = posterior_samples(model, inputs, sizes[-1], seed)
    if model.scaler is not None:
        z = model.scaler.inverse_target(z)
    means = np.stack([z[:, :s].mean(axis=1) for s in sizes])
    stds = np.stack([z[:, :s].std(axis=1) for s in sizes])
    return ConvergenceStudy(sizes, means, stds)
