"""Multilayer perceptron in numpy: forward/backward, ADAM, windowing, scaling,
early-stopped training and a text persistence format."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from .data import LoadSeries

FORMAT_TAG = "loadtl-mlp"
FORMAT_VERSION = 1


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or parameter."""


@dataclass(frozen=True)
class Hyperparameters:
    layer_sizes: tuple[int, ...]
    lookback: int = 168
    learning_rate: float = 1e-4
    batch_size: int = 256
    horizon: int = 24

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if not self.layer_sizes or min(self.layer_sizes) < 1:
            raise ValueError("at least one hidden layer with positive width required")
        if self.lookback < 1 or self.horizon < 1 or self.batch_size < 1:
            raise ValueError("lookback, horizon and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes)


# ---------------------------------------------------------------------------
# Activations


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z, a):
    return (z > 0).astype(z.dtype)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _sigmoid_grad(z, a):
    return a * (1.0 - a)


def _tanh_grad(z, a):
    return 1.0 - a * a


ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "relu": (_relu, _relu_grad),
    "sigmoid": (_sigmoid, _sigmoid_grad),
    "tanh": (np.tanh, _tanh_grad),
}


# ---------------------------------------------------------------------------
# Model


@dataclass(eq=False)
class MLPModel:
    """Weights are stored ``(fan_in, fan_out)`` so a batch forward is ``X @ W + b``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hparams: Hyperparameters
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        dims = [self.hparams.lookback, *self.hparams.layer_sizes, self.hparams.horizon]
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("layer count does not match hyperparameters")
        for W, b, i, o in zip(self.weights, self.biases, dims[:-1], dims[1:]):
            if W.shape != (i, o) or b.shape != (o,):
                raise ValueError(f"bad parameter shapes {W.shape}/{b.shape}, expected {(i, o)}/{(o,)}")

    @property
    def input_dim(self) -> int:
        return self.hparams.lookback

    @property
    def output_dim(self) -> int:
        return self.hparams.horizon

    def params(self) -> list[np.ndarray]:
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "MLPModel":
        return MLPModel([W.copy() for W in self.weights], [b.copy() for b in self.biases],
                        self.hparams, self.activation)

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def __call__(self, x):
        return forward(self, x)


def init_model(hparams: Hyperparameters, seed: int, activation: str = "relu") -> MLPModel:
    """He-uniform weights (bound ``sqrt(6 / fan_in)``), zero biases."""
    rng = np.random.default_rng(seed)
    dims = [hparams.lookback, *hparams.layer_sizes, hparams.horizon]
    weights, biases = [], []
    for i, o in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / i)
        weights.append(rng.uniform(-bound, bound, size=(i, o)))
        biases.append(np.zeros(o))
    return MLPModel(weights, biases, hparams, activation)


def forward(model: MLPModel, x) -> np.ndarray:
    """Hidden layers apply ``f(x W + b)``; the output layer is affine."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != model.input_dim:
        raise ValueError(f"input length {h.shape[1]} != lookback {model.input_dim}")
    act = ACTIVATIONS[model.activation][0]
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ W + b
        if i < last:
            h = act(h)
    return h[0] if single else h


def gradients(model: MLPModel, X, Y) -> tuple[list[np.ndarray], float]:
    """Mean squared error over every output of the batch and its exact gradient.

    Gradients come back in :meth:`MLPModel.params` order.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("non-empty 2-D batch required")
    act, dact = ACTIVATIONS[model.activation]
    last = len(model.weights) - 1
    pre, post = [], [X]
    h = X
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W + b
        pre.append(z)
        h = act(z) if i < last else z
        post.append(h)
    err = h - Y
    loss = float(np.mean(err * err))
    if not math.isfinite(loss):
        raise DivergenceError("non-finite loss")

    delta = 2.0 * err / err.size
    grads: list[np.ndarray] = [None] * (2 * len(model.weights))
    for i in range(last, -1, -1):
        grads[2 * i] = post[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * dact(pre[i - 1], post[i])
    return grads, loss


def mse(model: MLPModel, X, Y) -> float:
    err = forward(model, X) - np.asarray(Y)
    return float(np.mean(err * err))


# ---------------------------------------------------------------------------
# Optimizer


class Adam:
    """ADAM with bias correction; moments are allocated lazily per parameter."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None
        self.t = 0

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        """Update ``params`` in place."""
        if len(params) != len(grads):
            raise ValueError("params and grads differ in length")
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        elif len(self.m) != len(params):
            raise ValueError("optimizer state does not match params")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape or p.shape != m.shape:
                raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# Scaling and windows


@dataclass(frozen=True)
class Scaler:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError("scaler std must be > 0")

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


def fit_scaler(values) -> Scaler:
    """z-score statistics (population std) of the non-missing values."""
    v = np.asarray(values, dtype=np.float64)
    v = v[~np.isnan(v)]
    if len(v) < 2 or np.all(v == v[0]):
        raise ValueError("cannot fit a scaler to a constant or near-empty series")
    return Scaler(float(v.mean()), float(v.std()))


@dataclass(frozen=True)
class WindowSet:
    """Input windows (``n, lookback``), targets (``n, horizon``) and the
    timestamp of each target's first hour."""

    inputs: np.ndarray
    targets: np.ndarray
    anchors: pd.DatetimeIndex

    def __len__(self):
        return len(self.inputs)

    def scaled(self, scaler: Scaler) -> "WindowSet":
        return replace(self, inputs=scaler.transform(self.inputs), targets=scaler.transform(self.targets))

    @staticmethod
    def concat(sets: Sequence["WindowSet"]) -> "WindowSet":
        return WindowSet(np.concatenate([s.inputs for s in sets]),
                         np.concatenate([s.targets for s in sets]),
                         pd.DatetimeIndex(np.concatenate([s.anchors.to_numpy() for s in sets])))


def make_windows(series: LoadSeries, lookback: int, horizon: int = 24, start=None, stop=None,
                 anchored: bool = True) -> WindowSet:
    """Build (window, target) pairs from a dense series.

    With ``anchored`` (the default) every target is one calendar day starting
    at midnight and consecutive samples are 24 h apart; otherwise every hour
    is an anchor. ``start``/``stop`` restrict the target span to
    ``[start, stop)`` while inputs may reach back before ``start``.
    """
    n = len(series)
    if n < lookback + horizon:
        raise ValueError(f"{series.country_code}: series of {n} samples too short "
                         f"for lookback {lookback} + horizon {horizon}")
    lo = lookback if start is None else max(lookback, series.position(start))
    hi = n if stop is None else min(n, series.position(stop))
    cand = np.arange(lo, hi - horizon + 1)
    if anchored:
        hours = series.index.hour.to_numpy()
        cand = cand[hours[cand] == 0]
    v = series.values
    if len(cand):
        used = np.zeros(n, bool)
        first, last = cand[0] - lookback, cand[-1] + horizon
        used[first:last] = True
        if np.any(series.missing_mask & used):
            raise ValueError(f"{series.country_code}: missing values inside the windowed span")
    X = np.stack([v[a - lookback:a] for a in cand]) if len(cand) else np.empty((0, lookback))
    Y = np.stack([v[a:a + horizon] for a in cand]) if len(cand) else np.empty((0, horizon))
    anchors = series.start + pd.to_timedelta(cand, unit="h")
    return WindowSet(X, Y, pd.DatetimeIndex(anchors))


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 200
    patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")


class EarlyStopping:
    """Tracks the best validation loss; ``update`` returns True once ``patience``
    epochs have passed without a strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = math.inf
        self.best_epoch = -1
        self.bad_epochs = 0

    def update(self, epoch: int, loss: float) -> bool:
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)   # index 0 is the untrained model
    best_epoch: int = 0
    stopped_epoch: int = 0

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch]


def train(model: MLPModel, train_set: WindowSet, val_set: WindowSet, config: TrainConfig = TrainConfig(),
          reporter: Callable[[int, float], None] | None = None) -> tuple[MLPModel, History]:
    """Mini-batch ADAM on shuffled samples with early stopping on validation MSE.

    The incoming model counts as epoch 0, so the result is never worse on
    validation than the starting point. ``reporter(epoch, val_loss)`` is called
    after every epoch and may raise to abort (used for pruning).
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    work = model.copy()
    params = work.params()
    opt = Adam(model.hparams.learning_rate, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng(config.seed)
    bs = model.hparams.batch_size
    X, Y = train_set.inputs, train_set.targets
    n = len(X)

    hist = History()
    stopper = EarlyStopping(config.patience)
    v0 = mse(work, val_set.inputs, val_set.targets)
    hist.val_loss.append(v0)
    hist.train_loss.append(math.nan)
    stopper.update(0, v0)
    best = work.copy()

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, bs):
            idx = order[s:s + bs]
            grads, loss = gradients(work, X[idx], Y[idx])
            opt.step(params, grads)
            total += loss * len(idx)
        val = mse(work, val_set.inputs, val_set.targets)
        if not math.isfinite(val):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        hist.train_loss.append(total / n)
        hist.val_loss.append(val)
        hist.stopped_epoch = epoch
        stop = stopper.update(epoch, val)
        if stopper.best_epoch == epoch:
            best = work.copy()
        if reporter is not None:
            reporter(epoch, val)
        if stop:
            break
    hist.best_epoch = stopper.best_epoch
    return best, hist


# ---------------------------------------------------------------------------
# Persistence


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def model_to_text(model: MLPModel) -> str:
    hp = model.hparams
    lines = [
        f"{FORMAT_TAG} {FORMAT_VERSION} lookback={hp.lookback} horizon={hp.horizon} "
        f"activation={model.activation} layers={','.join(map(str, hp.layer_sizes))} "
        f"learning_rate={_fmt(hp.learning_rate)} batch_size={hp.batch_size}"
    ]
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        lines.append(f"layer {i} {W.shape[0]} {W.shape[1]}")
        lines.extend(" ".join(map(_fmt, row)) for row in W)
        lines.append(" ".join(map(_fmt, b)))
    return "\n".join(lines) + "\n"


def model_from_text(text: str) -> MLPModel:
    lines = text.splitlines()
    head = lines[0].split()
    if head[:2] != [FORMAT_TAG, str(FORMAT_VERSION)]:
        raise ValueError(f"unsupported model format: {lines[0]!r}")
    kv = dict(tok.split("=", 1) for tok in head[2:])
    hp = Hyperparameters(
        layer_sizes=tuple(int(s) for s in kv["layers"].split(",")),
        lookback=int(kv["lookback"]),
        learning_rate=float(kv["learning_rate"]),
        batch_size=int(kv["batch_size"]),
        horizon=int(kv["horizon"]),
    )
    weights, biases = [], []
    pos = 1
    for i in range(hp.num_layers + 1):
        tag, idx, fan_in, fan_out = lines[pos].split()
        if tag != "layer" or int(idx) != i:
            raise ValueError(f"expected layer {i} at line {pos + 1}")
        fan_in, fan_out = int(fan_in), int(fan_out)
        rows = [np.array(lines[pos + 1 + r].split(), dtype=np.float64) for r in range(fan_in)]
        weights.append(np.stack(rows).reshape(fan_in, fan_out))
        biases.append(np.array(lines[pos + 1 + fan_in].split(), dtype=np.float64).reshape(fan_out))
        pos += fan_in + 2
    return MLPModel(weights, biases, hp, kv["activation"])


def save_model(model: MLPModel, path) -> None:
    Path(path).write_text(model_to_text(model), encoding="utf-8")


def load_model(path) -> MLPModel:
    return model_from_text(Path(path).read_text(encoding="utf-8"))
