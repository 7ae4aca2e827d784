"""Sensitivity predictor: CDF transform, feature extractor, sigmoid heads, inverse CDF.

The network is plain numpy with hand-written backpropagation. Training runs in
CDF-transformed space (inputs and targets both in ``(0, 1)``); the transforms
are applied around the network only at inference.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import InsufficientDataError, LookAheadError, ShapeMismatchError
from .features import CdfTransformer, EmpiricalCdf, FeatureGridSpec, fit_cdf, kind_groups

TARGET_NAMES = ("alpha", "beta", "rho")
CHECKPOINT_FORMAT = "indextrack-predictor/1"


def leaky_relu(z, slope):
    return np.where(z > 0, z, slope * z)


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Dense:
    """Affine layer ``x @ W + b`` initialised uniformly in ``±1/sqrt(fan_in)``."""

    def __init__(self, fan_in, fan_out, rng):
        bound = 1.0 / math.sqrt(fan_in)
        self.W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        self.b = rng.uniform(-bound, bound, size=fan_out)

    @property
    def params(self):
        return [self.W, self.b]


class _Block:
    """Dense -> LeakyReLU -> Dropout."""

    def __init__(self, fan_in, fan_out, slope, dropout, rng):
        self.dense = Dense(fan_in, fan_out, rng)
        self.slope = slope
        self.dropout = dropout

    def forward(self, x, rng=None):
        z = x @ self.dense.W + self.dense.b
        a = leaky_relu(z, self.slope)
        mask = None
        if rng is not None and self.dropout > 0:
            keep = 1.0 - self.dropout
            mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
        return a, (x, z, mask)

    def backward(self, da, cache):
        x, z, mask = cache
        if mask is not None:
            da = da * mask
        dz = da * np.where(z > 0, 1.0, self.slope)
        return dz @ self.dense.W.T, [x.T @ dz, dz.sum(axis=0)]


class MLPExtractor:
    """Feature extractor: a stack of Dense/LeakyReLU/Dropout blocks over the flat tensor.

    Any extractor exposes ``params``, ``output_dim``, ``forward(x, rng)`` returning
    ``(h, cache)``, and ``backward(dh, cache)`` returning parameter gradients in
    ``params`` order.
    """

    kind = "mlp"

    def __init__(self, input_dim, width=64, n_layers=2, dropout=0.1, slope=0.01, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        dims = [input_dim] + [width] * n_layers
        self.blocks = [_Block(a, b, slope, dropout, rng) for a, b in zip(dims, dims[1:])]
        self.output_dim = dims[-1]

    @property
    def params(self):
        return [p for blk in self.blocks for p in blk.dense.params]

    def forward(self, x, rng=None):
        caches = []
        for blk in self.blocks:
            x, c = blk.forward(x, rng)
            caches.append(c)
        return x, caches

    def backward(self, dh, caches):
        grads = []
        for blk, c in zip(reversed(self.blocks), reversed(caches)):
            dh, g = blk.backward(dh, c)
            grads = g + grads
        return grads

    def preactivations(self, caches):
        return [c[1] for c in caches]


EXTRACTORS = {"mlp": MLPExtractor}


class _Head:
    """One output: hidden block then a single sigmoid unit."""

    def __init__(self, fan_in, width, slope, dropout, rng):
        self.hidden = _Block(fan_in, width, slope, dropout, rng)
        self.out = Dense(width, 1, rng)

    @property
    def params(self):
        return self.hidden.dense.params + self.out.params

    def forward(self, h, rng=None):
        a, c = self.hidden.forward(h, rng)
        o = a @ self.out.W + self.out.b
        return sigmoid(o)[:, 0], (a, c, o)

    def backward(self, ds, s, cache):
        a, c, o = cache
        do = (ds * s * (1.0 - s))[:, None]
        gW, gb = a.T @ do, do.sum(axis=0)
        dh, g = self.hidden.backward(do @ self.out.W.T, c)
        return dh, g + [gW, gb]


class SensitivityNetwork:
    """Extractor followed by one head per target; maps ``(n, d)`` to ``(n, 3)`` in ``(0, 1)``."""

    def __init__(
        self,
        input_dim,
        extractor="mlp",
        width=64,
        n_layers=2,
        head_width=64,
        dropout=0.1,
        slope=0.01,
        rng=None,
    ):
        rng = np.random.default_rng() if rng is None else rng
        self.input_dim = input_dim
        self.extractor = EXTRACTORS[extractor](input_dim, width, n_layers, dropout, slope, rng)
        self.heads = [
            _Head(self.extractor.output_dim, head_width, slope, dropout, rng)
            for _ in TARGET_NAMES
        ]

    @property
    def params(self):
        return self.extractor.params + [p for h in self.heads for p in h.params]

    def get_flat(self):
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, theta):
        pos = 0
        for p in self.params:
            p[...] = theta[pos : pos + p.size].reshape(p.shape)
            pos += p.size

    def forward(self, x, rng=None):
        h, ecache = self.extractor.forward(x, rng)
        outs, hcaches = [], []
        for head in self.heads:
            s, c = head.forward(h, rng)
            outs.append(s)
            hcaches.append(c)
        return np.stack(outs, axis=1), (ecache, hcaches)

    def predict(self, x):
        return self.forward(x)[0]

    def preactivations(self, x):
        """Leaky-ReLU pre-activations of a deterministic forward pass."""
        _, (ecache, hcaches) = self.forward(x)
        zs = self.extractor.preactivations(ecache)
        zs.extend(c[1] for _, c, _ in hcaches)
        return zs

    def loss_and_grad(self, x, y, l2=0.0, rng=None):
        """Mean squared error over all outputs plus ``l2 * sum(theta**2)``."""
        s, (ecache, hcaches) = self.forward(x, rng)
        diff = s - y
        loss = float(np.mean(diff**2))
        ds = 2.0 * diff / diff.size
        dh = np.zeros((x.shape[0], self.extractor.output_dim))
        head_grads = []
        for j, head in enumerate(self.heads):
            dhj, g = head.backward(ds[:, j], s[:, j], hcaches[j])
            dh += dhj
            head_grads.extend(g)
        grads = self.extractor.backward(dh, ecache) + head_grads
        if l2:
            params = self.params
            loss += l2 * sum(float(np.sum(p * p)) for p in params)
            grads = [g + 2.0 * l2 * p for g, p in zip(grads, params)]
        return loss, grads


def mse(net: SensitivityNetwork, x, y, batch=8192) -> float:
    total = 0.0
    for lo in range(0, x.shape[0], batch):
        d = net.predict(x[lo : lo + batch]) - y[lo : lo + batch]
        total += float(np.sum(d * d))
    return total / y.size


def gradient_check(net: SensitivityNetwork, x, y, l2=0.0, eps=1e-5, floor=1e-6) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``. Parameters whose
    perturbation moves any Leaky-ReLU pre-activation across zero are skipped.
    Dropout is off.
    """
    _, grads = net.loss_and_grad(x, y, l2)
    analytic = np.concatenate([g.ravel() for g in grads])
    theta = net.get_flat()
    worst = 0.0
    try:
        for j in range(theta.size):
            tp = theta.copy()
            tp[j] += eps
            net.set_flat(tp)
            lp, _ = net.loss_and_grad(x, y, l2)
            zp = net.preactivations(x)
            tm = theta.copy()
            tm[j] -= eps
            net.set_flat(tm)
            lm, _ = net.loss_and_grad(x, y, l2)
            zm = net.preactivations(x)
            if any(np.any((a > 0) != (b > 0)) for a, b in zip(zp, zm)):
                continue
            numeric = (lp - lm) / (2 * eps)
            a = analytic[j]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, rel)
    finally:
        net.set_flat(theta)
    return worst


class EarlyStopping:
    """Tracks the best validation loss; ``step`` returns True when patience is exhausted."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self.bad_epochs = 0

    def step(self, epoch: int, loss: float) -> bool:
        if loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = loss, epoch, 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def cosine_lr(initial, epoch, max_epochs):
    return initial * 0.5 * (1.0 + math.cos(math.pi * epoch / max_epochs))


@dataclass
class TrainConfig:
    batch_size: int = 512
    momentum: float = 0.1
    l2: float = 1e-4
    initial_lr: float = 1e-2
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    width: int = 64
    n_layers: int = 2
    head_width: int = 64
    dropout: float = 0.1
    extractor: str = "mlp"
    cdf_per_cell: bool = True

    def __post_init__(self):
        for name in ("batch_size", "initial_lr", "max_epochs", "width", "n_layers", "head_width"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.momentum < 0 or self.l2 < 0 or not 0 <= self.dropout < 1:
            raise ValueError("momentum and l2 must be >= 0, dropout in [0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.extractor not in EXTRACTORS:
            raise ValueError(f"unknown extractor {self.extractor!r}")


class SensitivityPredictor(RegressorMixin, BaseEstimator):
    """Predicts ``(alpha, beta, rho)`` per record from its feature tensor.

    ``fit`` learns the input and target CDFs from the training records only,
    then trains the network with momentum SGD, L2 penalty and a cosine-annealed
    learning rate, keeping the parameters with the lowest validation loss.
    """

    def __init__(
        self,
        grid=None,
        extractor="mlp",
        width=64,
        n_layers=2,
        head_width=64,
        dropout=0.1,
        batch_size=512,
        momentum=0.1,
        l2=1e-4,
        initial_lr=1e-2,
        max_epochs=100,
        patience=10,
        cdf_per_cell=True,
        random_state=0,
        episode=None,
    ):
        self.grid = grid
        self.extractor = extractor
        self.width = width
        self.n_layers = n_layers
        self.head_width = head_width
        self.dropout = dropout
        self.batch_size = batch_size
        self.momentum = momentum
        self.l2 = l2
        self.initial_lr = initial_lr
        self.max_epochs = max_epochs
        self.patience = patience
        self.cdf_per_cell = cdf_per_cell
        self.random_state = random_state
        self.episode = episode

    @classmethod
    def from_config(cls, cfg: TrainConfig, grid=None, episode=None):
        kw = asdict(cfg)
        kw["random_state"] = kw.pop("seed")
        return cls(grid=grid, episode=episode, **kw)

    def _flatten(self, X):
        X = np.asarray(X, dtype=float)
        if self.grid is not None and X.ndim == 4 and X.shape[1:] != self.grid.shape:
            raise ShapeMismatchError(f"tensor shape {X.shape[1:]} != grid {self.grid.shape}")
        X = X.reshape(X.shape[0], int(np.prod(X.shape[1:])))
        expected = getattr(self, "n_features_in_", None)
        if expected is None and self.grid is not None:
            expected = self.grid.n_features
        if expected is not None and X.shape[1] != expected:
            raise ShapeMismatchError(f"{X.shape[1]} features, model expects {expected}")
        if not np.isfinite(X).all():
            raise ValueError("feature tensors must be finite")
        return X

    def fit(self, X, y, X_val=None, y_val=None):
        X = self._flatten(X)
        y = np.asarray(y, dtype=float)
        if X.shape[0] == 0:
            raise InsufficientDataError("empty training block")
        if X_val is not None and len(X_val) == 0:
            raise InsufficientDataError("empty validation block")
        if y.shape != (X.shape[0], len(TARGET_NAMES)) or not np.isfinite(y).all():
            raise ValueError("targets must be a finite (n, 3) array")
        self.n_features_in_ = X.shape[1]
        groups = None if self.cdf_per_cell or self.grid is None else kind_groups(self.grid)
        self.x_cdf_ = CdfTransformer(groups=groups).fit(X)
        self.y_cdf_ = CdfTransformer().fit(y)
        Xu, yu = self.x_cdf_.transform(X), self.y_cdf_.transform(y)
        if X_val is not None:
            Xv = self.x_cdf_.transform(self._flatten(X_val))
            yv = self.y_cdf_.transform(np.asarray(y_val, dtype=float))
        else:
            Xv, yv = Xu, yu

        rng = np.random.default_rng(self.random_state)
        net = SensitivityNetwork(
            X.shape[1], self.extractor, self.width, self.n_layers,
            self.head_width, self.dropout, rng=rng,
        )
        velocity = [np.zeros_like(p) for p in net.params]
        stopper = EarlyStopping(self.patience)
        best_theta = net.get_flat()
        history = []
        n = Xu.shape[0]
        for epoch in range(self.max_epochs):
            lr = cosine_lr(self.initial_lr, epoch, self.max_epochs)
            order = rng.permutation(n)
            running = 0.0
            for lo in range(0, n, self.batch_size):
                idx = order[lo : lo + self.batch_size]
                loss, grads = net.loss_and_grad(Xu[idx], yu[idx], self.l2, rng)
                running += loss * idx.size
                for p, v, g in zip(net.params, velocity, grads):
                    v *= self.momentum
                    v += g
                    p -= lr * v
            val = mse(net, Xv, yv)
            history.append({"epoch": epoch + 1, "lr": lr, "train_loss": running / n, "val_loss": val})
            stop = stopper.step(epoch + 1, val)
            if stopper.best_epoch == epoch + 1:
                best_theta = net.get_flat()
            if stop:
                break
        net.set_flat(best_theta)
        self.network_ = net
        self.history_ = history
        self.n_epochs_ = len(history)
        self.best_epoch_ = stopper.best_epoch
        self.best_val_loss_ = stopper.best
        return self

    def predict(self, X):
        """Raw ``(alpha, beta, rho)`` predictions, shape ``(n, 3)``."""
        check_is_fitted(self, "network_")
        Xu = self.x_cdf_.transform(self._flatten(X))
        return self.y_cdf_.inverse_transform(self.network_.predict(Xu))

    def score(self, X, y, sample_weight=None):
        """Negative mean squared error in transformed target space."""
        check_is_fitted(self, "network_")
        Xu = self.x_cdf_.transform(self._flatten(X))
        yu = self.y_cdf_.transform(np.asarray(y, dtype=float))
        return -mse(self.network_, Xu, yu)

    def check_episode(self, episode) -> None:
        if self.episode != episode:
            raise LookAheadError(f"model bound to episode {self.episode}, asked for {episode}")

    # ------------------------------------------------------------------ io

    def save(self, path) -> None:
        """Write a self-describing ``.npz`` checkpoint."""
        check_is_fitted(self, "network_")
        arrays = {f"param_{j}": p for j, p in enumerate(self.network_.params)}
        for name, tr in (("x", self.x_cdf_), ("y", self.y_cdf_)):
            labels = tr._labels(tr.n_features_in_)
            seen = {}
            for j, g in enumerate(labels):
                if g not in seen:
                    seen[g] = len(seen)
                    arrays[f"{name}_knots_{seen[g]}"] = tr.cdfs_[j].knots
            arrays[f"{name}_groups"] = np.array([seen[g] for g in labels])
        params = self.get_params()
        params["grid"] = None if self.grid is None else self.grid.to_dict()
        meta = {
            "format": CHECKPOINT_FORMAT,
            "params": params,
            "n_features_in": self.n_features_in_,
            "n_epochs": self.n_epochs_,
            "best_epoch": self.best_epoch_,
            "best_val_loss": self.best_val_loss_,
            "history": self.history_,
        }
        arrays["meta"] = np.array(json.dumps(meta))
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "SensitivityPredictor":
        with np.load(Path(path), allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ValueError(f"{path} is not a predictor checkpoint")
            params = dict(meta["params"])
            if params["grid"] is not None:
                params["grid"] = FeatureGridSpec(**params["grid"])
            model = cls(**params)
            model.n_features_in_ = meta["n_features_in"]
            model.n_epochs_ = meta["n_epochs"]
            model.best_epoch_ = meta["best_epoch"]
            model.best_val_loss_ = meta["best_val_loss"]
            model.history_ = meta["history"]
            net = SensitivityNetwork(
                model.n_features_in_, model.extractor, model.width, model.n_layers,
                model.head_width, model.dropout, rng=np.random.default_rng(0),
            )
            for j, p in enumerate(net.params):
                p[...] = z[f"param_{j}"]
            model.network_ = net
            for name in ("x", "y"):
                groups = z[f"{name}_groups"]
                cdfs = {}
                tr = CdfTransformer(groups=groups.tolist())
                tr.n_features_in_ = groups.size
                tr.cdfs_ = []
                for g in groups:
                    if g not in cdfs:
                        cdfs[g] = _cdf_from_knots(z[f"{name}_knots_{g}"])
                    tr.cdfs_.append(cdfs[g])
                setattr(model, f"{name}_cdf_", tr)
        return model


def _cdf_from_knots(knots) -> EmpiricalCdf:
    knots = np.array(knots, dtype=float)
    cdf = fit_cdf(knots)
    if not np.array_equal(cdf.knots, knots):
        raise ValueError("checkpoint knots are not sorted and distinct")
    return cdf
