"""Doubly stochastic deep Gaussian process built from sparse variational layers.

Each :class:`SvgpLayer` holds ``M`` inducing inputs ``Z`` and a free-form
Gaussian ``q(u) = N(m, L L^T)`` over the inducing outputs (one per output
dimension), with ``p(u) = N(0, Kzz)``. Marginals of ``q(f(x))`` follow from
the usual sparse-GP conditional. A two-layer model pushes reparameterized
samples of the first layer through the second; the inner layer carries an
identity mean function so it starts as a near pass-through.

Everything runs in float64 torch so autograd supplies exact gradients.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .correlations import BaseModelKind
from .dataset import StandardScaler
from .errors import DivergenceError, NumericError, ShapeError, SizeError
from .nncore import TrainConfig, shuffle_rng
from .predictions import PredictionSet

log = logging.getLogger(__name__)

DTYPE = torch.float64
JITTERS = (1e-6, 1e-5, 1e-4)
N_INDUCING = 128
TRAIN_MC = 5
PREDICT_MC = 50


def _t(x) -> torch.Tensor:
    return torch.as_tensor(np.asarray(x, dtype=float), dtype=DTYPE)


def rbf(x: torch.Tensor, z: torch.Tensor, variance, lengthscales) -> torch.Tensor:
    """``variance * exp(-0.5 * sum_d ((x_d - z_d) / l_d)^2)`` for all row pairs."""
    if x.shape[-1] != lengthscales.shape[-1] or z.shape[-1] != lengthscales.shape[-1]:
        raise ShapeError(f"input width {x.shape[-1]}/{z.shape[-1]} does not match "
                         f"{lengthscales.shape[-1]} lengthscales")
    xs = x / lengthscales
    zs = z / lengthscales
    sq = (xs**2).sum(-1)[..., :, None] + (zs**2).sum(-1)[..., None, :] - 2.0 * xs @ zs.transpose(-1, -2)
    return variance * torch.exp(-0.5 * sq.clamp_min(0.0))


@dataclass(frozen=True)
class RbfKernel:
    variance: float
    lengthscales: tuple

    def __post_init__(self):
        if not self.variance > 0 or any(not l > 0 for l in self.lengthscales):
            raise ValueError("kernel variance and lengthscales must be positive")


def rbf_eval(kernel: RbfKernel, x, x2) -> np.ndarray:
    """Kernel matrix between row sets ``x`` and ``x2`` (1-D inputs are single points)."""
    a = np.atleast_2d(np.asarray(x, dtype=float))
    b = np.atleast_2d(np.asarray(x2, dtype=float))
    with torch.no_grad():
        k = rbf(_t(a), _t(b), kernel.variance, _t(kernel.lengthscales))
    return k.numpy()


def jittered_cholesky(k: torch.Tensor, jitters=JITTERS) -> torch.Tensor:
    eye = torch.eye(k.shape[-1], dtype=k.dtype)
    for j in jitters:
        chol, info = torch.linalg.cholesky_ex(k + j * eye)
        if int(info.max()) == 0:
            if j != jitters[0]:
                log.debug("cholesky needed jitter %g", j)
            return chol
    raise NumericError(f"Cholesky failed even with jitter {jitters[-1]:g}")


def kmeanspp(x: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: ``m`` distinct rows of ``x`` spread out by D^2 sampling."""
    n = len(x)
    m = min(m, n)
    chosen = [int(rng.integers(n))]
    d2 = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    for _ in range(1, m):
        total = d2.sum()
        if total <= 0:
            rest = np.setdiff1d(np.arange(n), chosen)
            chosen.extend(rng.choice(rest, m - len(chosen), replace=False).tolist())
            break
        i = int(rng.choice(n, p=d2 / total))
        chosen.append(i)
        d2 = np.minimum(d2, np.sum((x - x[i]) ** 2, axis=1))
    return x[np.array(chosen)].copy()


class SvgpLayer(torch.nn.Module):
    def __init__(self, inducing, out_dim: int, identity_mean: bool = False, q_scale: float = 1.0,
                 variance: float = 1.0, lengthscale: float = 1.0, prior_cov: bool = False):
        super().__init__()
        z = _t(inducing).clone()  # never alias the caller's array
        m, d = z.shape
        if m < 1 or not torch.all(torch.isfinite(z)):
            raise ValueError("need at least one finite inducing input")
        if identity_mean and out_dim != d:
            raise ShapeError("identity mean needs out_dim equal to the input width")
        self.identity_mean = identity_mean
        self.z = torch.nn.Parameter(z)
        self.log_variance = torch.nn.Parameter(torch.tensor(math.log(variance), dtype=DTYPE))
        self.log_lengthscales = torch.nn.Parameter(torch.full((d,), math.log(lengthscale), dtype=DTYPE))
        self.q_mu = torch.nn.Parameter(torch.zeros(m, out_dim, dtype=DTYPE))
        if prior_cov:
            with torch.no_grad():
                chol = jittered_cholesky(self.kzz()).expand(out_dim, m, m).clone()
        else:
            chol = q_scale * torch.eye(m, dtype=DTYPE).expand(out_dim, m, m).clone()
        self.q_offdiag = torch.nn.Parameter(torch.tril(chol, -1))
        self.q_log_diag = torch.nn.Parameter(torch.log(torch.diagonal(chol, dim1=-2, dim2=-1)))

    @property
    def n_inducing(self) -> int:
        return self.z.shape[0]

    @property
    def out_dim(self) -> int:
        return self.q_mu.shape[1]

    @property
    def variance(self):
        return torch.exp(self.log_variance)

    @property
    def lengthscales(self):
        return torch.exp(self.log_lengthscales)

    @property
    def kernel(self) -> RbfKernel:
        return RbfKernel(float(self.variance), tuple(float(v) for v in self.lengthscales))

    def q_chol(self) -> torch.Tensor:
        """Lower-triangular factors ``(out_dim, M, M)`` of the variational covariances."""
        return torch.tril(self.q_offdiag, -1) + torch.diag_embed(torch.exp(self.q_log_diag))

    def kzz(self) -> torch.Tensor:
        return rbf(self.z, self.z, self.variance, self.lengthscales)

    def set_q(self, mean=None, chol=None):
        with torch.no_grad():
            if mean is not None:
                self.q_mu.copy_(_t(mean).reshape(self.q_mu.shape))
            if chol is not None:
                c = _t(chol).expand(self.out_dim, self.n_inducing, self.n_inducing)
                self.q_offdiag.copy_(torch.tril(c, -1))
                self.q_log_diag.copy_(torch.log(torch.diagonal(c, dim1=-2, dim2=-1)))

    def marginals(self, x: torch.Tensor):
        """Mean and variance of ``q(f(x))``, each ``(N, out_dim)``."""
        lz = jittered_cholesky(self.kzz())
        kzx = rbf(self.z, x, self.variance, self.lengthscales)
        a = torch.linalg.solve_triangular(lz, kzx, upper=False)
        b = torch.linalg.solve_triangular(lz.T, a, upper=True)  # Kzz^-1 Kzx
        mean = b.T @ self.q_mu
        if self.identity_mean:
            mean = mean + x
        lb = self.q_chol().transpose(-1, -2) @ b  # (out, M, N)
        var = self.variance - (a**2).sum(0)[:, None] + (lb**2).sum(1).T
        return mean, var

    def kl(self) -> torch.Tensor:
        """KL(q(u) || p(u)) summed over output dimensions."""
        lz = jittered_cholesky(self.kzz())
        lq = self.q_chol()
        m = self.n_inducing
        a = torch.linalg.solve_triangular(lz, lq, upper=False)
        mu = torch.linalg.solve_triangular(lz, self.q_mu, upper=False)
        logdet_p = 2.0 * torch.log(torch.diagonal(lz)).sum()
        logdet_q = 2.0 * self.q_log_diag.sum(-1)
        per = 0.5 * ((a**2).sum((-1, -2)) + (mu**2).sum(0) - m + logdet_p - logdet_q)
        return per.sum()


def layer_predict(layer: SvgpLayer, inputs):
    """Predictive mean and variance (numpy); tiny negative variances are clamped to 0."""
    with torch.no_grad():
        mean, var = layer.marginals(_t(inputs))
    var = var.numpy()
    worst = var.min() if var.size else 0.0
    if worst < -1e-10:
        log.warning("predictive variance %.3g < 0 clamped to 0", worst)
    return mean.numpy(), np.maximum(var, 0.0)


class DgpModel(torch.nn.Module):
    def __init__(self, layers, noise_variance: float = 0.01):
        super().__init__()
        self.layers = torch.nn.ModuleList(layers)
        for inner, outer in zip(layers[:-1], layers[1:]):
            if inner.out_dim != outer.z.shape[1]:
                raise ShapeError("layer output width does not match the next layer's input width")
        self.log_noise = torch.nn.Parameter(torch.tensor(math.log(noise_variance), dtype=DTYPE))
        self.scaler: Optional[StandardScaler] = None
        self.base = BaseModelKind.NO_BASE
        self.history: Optional[DgpHistory] = None

    @property
    def noise_variance(self):
        return torch.exp(self.log_noise)

    def kl(self) -> torch.Tensor:
        return sum(layer.kl() for layer in self.layers)

    def propagate(self, x: torch.Tensor, eps: Optional[torch.Tensor] = None):
        """Final-layer marginals for each MC draw: ``(S, N, out)`` mean and variance.

        ``eps`` holds one standard-normal tensor per inner layer, each ``(S, N, width)``.
        """
        if len(self.layers) == 1:
            mean, var = self.layers[0].marginals(x)
            return mean[None], var[None]
        s = eps[0].shape[0]
        h = x.expand(s, *x.shape)
        for i, layer in enumerate(self.layers[:-1]):
            flat = h.reshape(-1, h.shape[-1])
            mean, var = layer.marginals(flat)
            h = (mean + torch.sqrt(var.clamp_min(1e-12)) * eps[i].reshape(mean.shape)).reshape(
                s, x.shape[0], -1)
        mean, var = self.layers[-1].marginals(h.reshape(-1, h.shape[-1]))
        return mean.reshape(s, x.shape[0], -1), var.reshape(s, x.shape[0], -1)

    def draw_eps(self, n_points: int, mc: int, generator: torch.Generator):
        return [torch.randn(mc, n_points, layer.out_dim, generator=generator, dtype=DTYPE)
                for layer in self.layers[:-1]]


def build_dgp(x_train, n_layers: int = 2, n_inducing: int = N_INDUCING, seed: int = 0,
              noise_variance: float = 0.01) -> DgpModel:
    """Two layers (``D`` GPs with identity mean, then one GP) on standardized inputs.

    Both layers start from the same k-means++ inducing set; the inner layer's
    variational covariance starts tiny, the outer layer's at its prior.
    """
    x = np.asarray(x_train, dtype=float)
    if x.ndim != 2 or len(x) == 0:
        raise SizeError("need a non-empty 2-D training input matrix")
    z = kmeanspp(x, n_inducing, np.random.default_rng(seed))
    d = x.shape[1]
    if n_layers == 1:
        layers = [SvgpLayer(z, 1, prior_cov=True)]
    elif n_layers == 2:
        layers = [SvgpLayer(z, d, identity_mean=True, q_scale=1e-5), SvgpLayer(z, 1, prior_cov=True)]
    else:
        raise ValueError("only one- or two-layer models are supported")
    return DgpModel(layers, noise_variance)


def dgp_elbo(model: DgpModel, x, y, n_total: int, mc_samples: int = TRAIN_MC,
             eps=None, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Doubly stochastic ELBO estimate for the whole dataset from one batch.

    Expected Gaussian log-likelihood under each draw's final marginal,
    averaged over draws and rescaled by ``n_total / batch``, minus the KL of
    every layer. Returns a differentiable scalar tensor.
    """
    x = _t(x) if not torch.is_tensor(x) else x
    y = _t(y).reshape(-1, 1) if not torch.is_tensor(y) else y.reshape(-1, 1)
    if x.shape[0] == 0:
        raise SizeError("dgp_elbo on an empty batch")
    if eps is None and len(model.layers) > 1:
        eps = model.draw_eps(x.shape[0], mc_samples, generator or torch.Generator().manual_seed(0))
    mean, var = model.propagate(x, eps)
    noise = model.noise_variance
    ell = -0.5 * torch.log(2 * math.pi * noise) - 0.5 * ((y - mean) ** 2 + var) / noise
    elbo = n_total * ell.mean() - model.kl()
    if not torch.isfinite(elbo):
        raise DivergenceError("non-finite ELBO")
    return elbo


@dataclass
class DgpHistory:
    elbo: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("epoch,train_loss,val_loss,lr,elbo\n")
            for e, (el, v, lr) in enumerate(zip(self.elbo, self.val_loss, self.lr)):
                fh.write(f"{e},{-el!r},{v!r},{lr!r},{el!r}\n")


def dgp_train(model: DgpModel, x_train, y_train, tc: TrainConfig, x_val=None, y_val=None,
              mc_samples: int = TRAIN_MC) -> DgpModel:
    """Adam on the negative per-point ELBO; trains ``model`` in place and returns it.

    The per-epoch ELBO is the batch-size-weighted mean of the step estimates.
    """
    x = _t(x_train)
    y = _t(y_train).reshape(-1, 1)
    n = x.shape[0]
    if n == 0:
        raise SizeError("training set is empty")
    order_rng = shuffle_rng(tc.seed)
    gen = torch.Generator().manual_seed(int(tc.seed))
    opt = torch.optim.Adam(model.parameters(), lr=tc.lr0, betas=(0.9, 0.999), eps=1e-8)
    hist = DgpHistory()
    bs = min(tc.batch_size, n)
    for epoch in range(tc.epochs):
        lr = tc.lr_at(epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        perm = torch.as_tensor(order_rng.permutation(n))
        total = 0.0
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            opt.zero_grad()
            try:
                elbo = dgp_elbo(model, x[idx], y[idx], n, mc_samples, generator=gen)
            except DivergenceError as exc:
                raise DivergenceError(f"non-finite ELBO at epoch {epoch}", epoch=epoch) from exc
            (-elbo / n).backward()
            opt.step()
            total += elbo.item() * len(idx) / n
        hist.elbo.append(total)
        hist.lr.append(lr)
        if x_val is not None:
            pred = dgp_predict_standardized(model, x_val, mc_samples=mc_samples, seed=tc.seed)
            hist.val_loss.append(float(np.mean((pred[0] - np.asarray(y_val, float).reshape(-1)) ** 2)))
        else:
            hist.val_loss.append(float("nan"))
    model.history = hist
    return model


def dgp_predict_standardized(model: DgpModel, inputs, mc_samples: int = PREDICT_MC, seed: int = 0,
                             include_noise: bool = True):
    """Moment-matched predictive mean and std in standardized target units.

    The total variance is the MC mean of the final-layer variances plus the
    spread of the per-draw means, plus the likelihood noise.
    """
    x = _t(inputs)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        eps = model.draw_eps(x.shape[0], mc_samples, gen) if len(model.layers) > 1 else None
        mean, var = model.propagate(x, eps)
        mean = mean[..., 0]
        var = var[..., 0].clamp_min(0.0)
        mu = mean.mean(0)
        total = var.mean(0) + ((mean - mu) ** 2).mean(0)
        if include_noise:
            total = total + model.noise_variance
    return mu.numpy(), np.sqrt(total.numpy())


def dgp_predict(model: DgpModel, inputs, mc_samples: int = PREDICT_MC, seed: int = 0) -> PredictionSet:
    mean, std = dgp_predict_standardized(model, inputs, mc_samples, seed)
    if model.scaler is not None:
        mean = model.scaler.inverse_target(mean)
        std = std * model.scaler.target_std
    return PredictionSet(mean, std)


def save_dgp(model: DgpModel, directory, **meta):
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), out / "dgp.pt")
    info = {"n_layers": len(model.layers), "n_inducing": [l.n_inducing for l in model.layers],
            "out_dims": [l.out_dim for l in model.layers], "base": BaseModelKind(model.base).value,
            "noise_variance": model.noise_variance.item(), **meta}
    (out / "dgp.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    if model.scaler is not None:
        model.scaler.to_json(out / "scaler.json")


def load_dgp(directory) -> DgpModel:
    d = Path(directory)
    info = json.loads((d / "dgp.json").read_text())
    state = torch.load(d / "dgp.pt")
    z0 = state["layers.0.z"].numpy()
    if info["n_layers"] == 1:
        layers = [SvgpLayer(z0, 1)]
    else:
        layers = [SvgpLayer(z0, z0.shape[1], identity_mean=True), SvgpLayer(state["layers.1.z"].numpy(), 1)]
    model = DgpModel(layers)
    model.load_state_dict(state)
    model.base = BaseModelKind(info["base"])
    if (d / "scaler.json").exists():
        model.scaler = StandardScaler.from_json(d / "scaler.json")
    return model
