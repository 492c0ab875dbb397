"""A small dense-network engine: forward, backprop, MSE, Adam, successive halving.

Parameters for ``K`` same-shape networks live in one ``(K, P)`` float64 buffer
(:class:`MlpParams`); per-layer weights and biases are views into it. A
single network is simply ``K == 1``. Training a stack applies exactly the
same per-member arithmetic as training each member alone, which is what lets
an ensemble train as one vectorized job.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DivergenceError, ShapeError, SizeError

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "tanh", "sigmoid", "swish")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class MlpConfig:
    hidden_widths: tuple = (64,) * 7
    activation: str = "swish"
    input_dim: int = 5
    output_dim: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if not self.hidden_widths or any(w <= 0 for w in self.hidden_widths):
            raise ConfigError(f"hidden_widths must be non-empty and positive, got {self.hidden_widths}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise ConfigError("input_dim and output_dim must be positive")

    @property
    def layer_sizes(self) -> tuple:
        return (self.input_dim, *self.hidden_widths, self.output_dim)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 250
    lr0: float = 1e-3
    decay_rate: float = 0.96
    decay_epochs: int = 1
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.lr0 < 0:
            raise ConfigError("lr0 must be non-negative")
        if not 0 < self.decay_rate <= 1:
            raise ConfigError("decay_rate must lie in (0, 1]")
        if self.decay_epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("decay_epochs and batch_size must be positive")

    def lr_at(self, epoch: int) -> float:
        return self.lr0 * self.decay_rate ** (epoch / self.decay_epochs)


def n_params(sizes) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def layer_views(flat: np.ndarray, sizes):
    """Per-layer ``(K, fan_in, fan_out)`` weight and ``(K, fan_out)`` bias views."""
    weights, biases, off = [], [], 0
    k = flat.shape[0]
    for a, b in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[:, off:off + a * b].reshape(k, a, b))
        off += a * b
        biases.append(flat[:, off:off + b])
        off += b
    return weights, biases


class MlpParams:
    """Weights and biases of ``K`` networks sharing one :class:`MlpConfig`."""

    def __init__(self, config: MlpConfig, flat: np.ndarray, seeds: Sequence[int] = ()):
        flat = np.ascontiguousarray(flat, dtype=float)
        if flat.ndim == 1:
            flat = flat[None, :]
        if flat.shape[1] != n_params(config.layer_sizes):
            raise ShapeError(f"flat buffer has {flat.shape[1]} params, config needs "
                             f"{n_params(config.layer_sizes)}")
        self.config = config
        self.flat = flat
        self.seeds = list(seeds)
        self.weights, self.biases = layer_views(flat, config.layer_sizes)

    @property
    def n_members(self) -> int:
        return self.flat.shape[0]

    def copy(self) -> "MlpParams":
        return MlpParams(self.config, self.flat.copy(), self.seeds)

    def member(self, k: int) -> "MlpParams":
        seeds = self.seeds[k:k + 1] if self.seeds else ()
        return MlpParams(self.config, self.flat[k:k + 1].copy(), seeds)

    @classmethod
    def stack(cls, members: Sequence["MlpParams"]) -> "MlpParams":
        config = members[0].config
        if any(m.config != config for m in members):
            raise ConfigError("cannot stack networks with different configs")
        return cls(config, np.concatenate([m.flat for m in members]),
                   [s for m in members for s in m.seeds])

    def save(self, path, **meta):
        """Portable ``.npz``: the flat buffer plus JSON metadata (shapes, seeds)."""
        info = {"config": asdict(self.config), "seeds": [int(s) for s in self.seeds],
                "layer_sizes": list(self.config.layer_sizes), **meta}
        np.savez(path, flat=self.flat, meta=np.array(json.dumps(info, sort_keys=True)))

    @classmethod
    def load(cls, path) -> "MlpParams":
        with np.load(path) as z:
            info = json.loads(str(z["meta"]))
            cfg = info["config"]
            cfg["hidden_widths"] = tuple(cfg["hidden_widths"])
            return cls(MlpConfig(**cfg), z["flat"], info["seeds"])


def mlp_init(config: MlpConfig, seeds: Optional[Sequence[int]] = None) -> MlpParams:
    """Glorot-uniform weights, zero biases; one network per seed (default ``config.seed``)."""
    seeds = [config.seed] if seeds is None else [int(s) for s in seeds]
    sizes = config.layer_sizes
    flat = np.zeros((len(seeds), n_params(sizes)))
    for k, seed in enumerate(seeds):
        rng = np.random.default_rng(seed)
        weights, _ = layer_views(flat[k:k + 1], sizes)
        for w in weights:
            fan_in, fan_out = w.shape[1:]
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            w[...] = rng.uniform(-bound, bound, size=w.shape)
    return MlpParams(config, flat, seeds)


# --------------------------------------------------------------------------
# Forward / backward
# --------------------------------------------------------------------------

def _sigmoid(z):
    # tanh form: cheaper than expit and overflow-free
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _activate(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return _sigmoid(z)
    return z * _sigmoid(z)


def _activate_with_grad(name, z):
    """Activation value and its derivative at ``z``."""
    if name == "relu":
        return np.maximum(z, 0.0), (z > 0).astype(float)
    if name == "tanh":
        a = np.tanh(z)
        return a, 1.0 - a * a
    s = _sigmoid(z)
    if name == "sigmoid":
        return s, s * (1.0 - s)
    a = z * s
    return a, s * (1.0 + z - a)


def forward_stack(weights, biases, x, activation, cache=None):
    """Forward pass of stacked layers; ``x`` is ``(n, d)`` shared or ``(K, n, d)``.

    With a ``cache`` list, stores ``(layer_input, activation_derivative)`` per layer.
    """
    h = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = np.matmul(h, w)
        z += b[:, None, :]
        if i == last:
            a, da = z, None
        elif cache is None:
            a, da = _activate(activation, z), None
        else:
            a, da = _activate_with_grad(activation, z)
        if cache is not None:
            cache.append((h, da))
        h = a
    return h


def backward_stack(weights, cache, grad_out, grad_weights, grad_biases):
    """Backprop ``grad_out`` (K, n, out) through the cached forward pass in place."""
    delta = grad_out
    for i in range(len(weights) - 1, -1, -1):
        h, da = cache[i]
        if da is not None:
            delta = delta * da
        if h.ndim == 2:
            grad_weights[i][...] = np.einsum("nd,knf->kdf", h, delta)
        else:
            grad_weights[i][...] = np.matmul(h.transpose(0, 2, 1), delta)
        delta.sum(axis=1, out=grad_biases[i])
        if i:
            delta = np.matmul(delta, weights[i].transpose(0, 2, 1))
    return delta


def forward(params: MlpParams, inputs) -> np.ndarray:
    """Network outputs: ``(n, output_dim)`` for one network, ``(K, n, output_dim)`` for a stack."""
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 2 or x.shape[1] != params.config.input_dim:
        raise ShapeError(f"expected inputs of shape (n, {params.config.input_dim}), got {x.shape}")
    out = forward_stack(params.weights, params.biases, x, params.config.activation)
    return out[0] if params.n_members == 1 else out


def mse_loss(predictions, targets):
    """Mean squared error and its gradient w.r.t. ``predictions``.

    Leading axes beyond the last two are treated as independent networks;
    the mean is taken per network.
    """
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(targets, dtype=float)
    if p.shape != t.shape:
        raise ShapeError(f"predictions {p.shape} and targets {t.shape} differ")
    if p.size == 0:
        raise SizeError("mse_loss on empty input")
    diff = p - t
    if p.ndim <= 2:
        return float(np.mean(diff**2)), 2.0 * diff / diff.size
    per = diff[0].size
    return np.mean(diff**2, axis=tuple(range(1, p.ndim))), 2.0 * diff / per


def loss_and_grad(params: MlpParams, x, y):
    """Per-member MSE and flat gradient ``(K, P)`` on a batch.

    ``x`` and ``y`` are either shared ``(n, d)`` arrays or per-member ``(K, n, d)``.
    """
    cache = []
    out = forward_stack(params.weights, params.biases, x, params.config.activation, cache)
    y = np.broadcast_to(y, out.shape)
    loss, g_out = mse_loss(out, y)
    grad = np.empty_like(params.flat)
    gw, gb = layer_views(grad, params.config.layer_sizes)
    backward_stack(params.weights, cache, g_out, gw, gb)
    return np.atleast_1d(loss), grad


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

class Adam:
    def __init__(self, shape, betas=ADAM_BETAS, eps=ADAM_EPS):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self._tmp = np.empty(shape)
        self.t = 0
        self.b1, self.b2 = betas
        self.eps = eps

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float):
        """One bias-corrected Adam update, written in place to avoid temporaries."""
        self.t += 1
        tmp = self._tmp
        self.m *= self.b1
        np.multiply(grad, 1 - self.b1, out=tmp)
        self.m += tmp
        np.multiply(grad, grad, out=tmp)
        tmp *= 1 - self.b2
        self.v *= self.b2
        self.v += tmp
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        np.divide(self.v, c2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += self.eps
        np.divide(self.m, tmp, out=tmp)
        tmp *= lr / c1
        params -= tmp


@dataclass
class History:
    train_loss: np.ndarray  # (K, epochs)
    val_loss: np.ndarray  # (K, epochs), NaN without validation data
    lr: np.ndarray  # (epochs,)

    def to_csv(self, path, member: Optional[int] = None):
        """``epoch,train_loss,val_loss,lr``; stacks are averaged unless ``member`` is given."""
        tr = self.train_loss.mean(axis=0) if member is None else self.train_loss[member]
        va = self.val_loss.mean(axis=0) if member is None else self.val_loss[member]
        with open(path, "w") as fh:
            fh.write("epoch,train_loss,val_loss,lr\n")
            for e, (a, b, c) in enumerate(zip(tr, va, self.lr)):
                fh.write(f"{e},{a!r},{b!r},{c!r}\n")


def shuffle_rng(seed: int) -> np.random.Generator:
    """Batch-order stream for a member, independent of its init stream."""
    return np.random.default_rng([int(seed), 0x5EED])


def train(params: MlpParams, x_train, y_train, tc: TrainConfig, x_val=None, y_val=None,
          shuffle_seeds: Optional[Sequence[int]] = None):
    """Minibatch Adam on MSE with lr(e) = lr0 * decay_rate**(e / decay_epochs).

    Trains a copy of ``params`` (every member of a stack in lockstep) and
    returns ``(trained, history)``. Member ``k`` shuffles with
    ``shuffle_seeds[k]`` (default: its init seed, else ``tc.seed``).
    """
    x = np.asarray(x_train, dtype=float)
    y = np.asarray(y_train, dtype=float).reshape(len(x), -1)
    if x.shape[0] == 0:
        raise SizeError("training set is empty")
    params = params.copy()
    k = params.n_members
    if shuffle_seeds is None:
        shuffle_seeds = params.seeds if len(params.seeds) == k else [tc.seed + i for i in range(k)]
    rngs = [shuffle_rng(s) for s in shuffle_seeds]
    n = x.shape[0]
    bs = min(tc.batch_size, n)
    opt = Adam(params.flat.shape)
    hist = History(np.full((k, tc.epochs), np.nan), np.full((k, tc.epochs), np.nan),
                   np.array([tc.lr_at(e) for e in range(tc.epochs)]))
    xv = None if x_val is None else np.asarray(x_val, dtype=float)
    yv = None if y_val is None else np.asarray(y_val, dtype=float).reshape(len(xv), -1)
    for epoch in range(tc.epochs):
        lr = hist.lr[epoch]
        perm = np.stack([r.permutation(n) for r in rngs])
        total = np.zeros(k)
        for start in range(0, n, bs):
            idx = perm[:, start:start + bs]
            loss, grad = loss_and_grad(params, x[idx], y[idx])
            total += loss * idx.shape[1]
            opt.step(params.flat, grad, lr)
        hist.train_loss[:, epoch] = total / n
        bad = ~np.isfinite(hist.train_loss[:, epoch]) | ~np.all(np.isfinite(params.flat), axis=1)
        if np.any(bad):
            raise DivergenceError(
                f"non-finite loss at epoch {epoch} for member(s) {np.flatnonzero(bad).tolist()}",
                epoch=epoch, members=np.flatnonzero(bad).tolist())
        if xv is not None:
            out = forward_stack(params.weights, params.biases, xv, params.config.activation)
            hist.val_loss[:, epoch] = np.mean((out - yv) ** 2, axis=(1, 2))
    return params, hist


# --------------------------------------------------------------------------
# Hyperparameter search
# --------------------------------------------------------------------------

@dataclass
class TuneResult:
    mlp: MlpConfig
    train: TrainConfig
    val_loss: float
    rung_sizes: list = field(default_factory=list)
    rung_epochs: list = field(default_factory=list)


DEFAULT_SPACE = {
    "depth": [7],
    "width": [16, 32, 64, 128],
    "activation": ["relu", "tanh", "swish"],
    "lr0": (1e-4, 1e-2),
    "batch_size": [32, 64, 128],
}


def sample_configs(space: dict, budget: int, rng: np.random.Generator, input_dim=5, output_dim=1):
    if not space or any(len(v) == 0 for v in space.values()):
        raise ConfigError("search space is empty")
    out = []
    for i in range(budget):
        depth = int(rng.choice(space.get("depth", [7])))
        width = int(rng.choice(space.get("width", [64])))
        act = str(rng.choice(space.get("activation", ["swish"])))
        lr_spec = space.get("lr0", (1e-3, 1e-3))
        if isinstance(lr_spec, tuple) and len(lr_spec) == 2:
            lr0 = float(math.exp(rng.uniform(math.log(lr_spec[0]), math.log(lr_spec[1]))))
        else:
            lr0 = float(rng.choice(lr_spec))
        bs = int(rng.choice(space.get("batch_size", [64])))
        out.append((MlpConfig((width,) * depth, act, input_dim, output_dim, seed=i),
                    {"lr0": lr0, "batch_size": bs}))
    return out


def tune(space: dict, budget: int, rungs: int, x_train, y_train, x_val, y_val,
         min_epochs: int = 4, eta: int = 2, seed: int = 0,
         base_train: Optional[TrainConfig] = None) -> TuneResult:
    """Random search pruned by synchronous successive halving.

    ``budget`` random configurations train for ``min_epochs``; after each rung
    the best ``ceil(n / eta)`` by validation MSE are retrained with ``eta``
    times more epochs. Diverging trials score ``inf``.
    """
    if budget < eta**rungs:
        raise ConfigError(f"budget {budget} too small for {rungs} rungs (need >= {eta**rungs})")
    rng = np.random.default_rng(seed)
    candidates = sample_configs(space, budget, rng, np.shape(x_train)[1],
                                np.asarray(y_train).reshape(len(x_train), -1).shape[1])
    base_train = base_train or TrainConfig()
    alive = list(range(budget))
    scores = {}
    sizes, epochs_log = [], []
    for rung in range(rungs + 1):
        epochs = min_epochs * eta**rung
        sizes.append(len(alive))
        epochs_log.append(epochs)
        for i in alive:
            mlp, hp = candidates[i]
            tc = replace(base_train, epochs=epochs, seed=seed + i, **hp)
            try:
                _, hist = train(mlp_init(mlp), x_train, y_train, tc, x_val, y_val)
                score = float(hist.val_loss[0, -1])
            except DivergenceError:
                score = math.inf
            scores[i] = score if math.isfinite(score) else math.inf
        ranked = sorted(alive, key=lambda i: (scores[i], i))
        if rung < rungs:
            alive = ranked[:math.ceil(len(alive) / eta)]
        else:
            alive = ranked
    best = alive[0]
    mlp, hp = candidates[best]
    log.info("tune: best config %s %s (val %.4g)", mlp, hp, scores[best])
    return TuneResult(mlp, replace(base_train, **hp), scores[best], sizes, epochs_log)
