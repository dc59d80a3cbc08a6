"""Tiny fully-connected network with hand-written backprop and optimizers.

Hidden layers use ReLU, the single output unit uses a sigmoid, and the loss
is binary cross-entropy.  Everything runs in float64 with numpy.

Parameters are handled as a flat list ``[W1, b1, W2, b2, ...]`` so that
gradients, optimizer accumulators and updates all share one layout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ddlab.curve import LearningCurve

P_CLAMP = 1e-12


@dataclass(frozen=True)
class MLPModel:
    layer_dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("number of layers does not match layer_dims")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[i], self.layer_dims[i + 1])
            if W.shape != shape or b.shape != (shape[1],):
                raise ValueError(f"layer {i}: expected W{shape}, b({shape[1]},), "
                                 f"got W{W.shape}, b{b.shape}")

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    @property
    def n_params(self) -> int:
        return param_count(self.layer_dims)

    def with_params(self, params: Sequence[np.ndarray]) -> "MLPModel":
        return MLPModel(self.layer_dims, tuple(params[0::2]), tuple(params[1::2]))


def param_count(layer_dims: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(layer_dims[:-1], layer_dims[1:]))


def init_mlp(layer_dims: Sequence[int], seed: int) -> MLPModel:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2:
        raise ValueError("layer_dims needs at least an input and an output size")
    if any(d < 1 for d in dims):
        raise ValueError("all layer sizes must be >= 1")
    if dims[-1] != 1:
        raise ValueError("output dimension must be 1")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLPModel(dims, tuple(weights), tuple(biases))


def sigmoid(z):
    # split by sign so that exp never overflows
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_input(model: MLPModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.layer_dims[0]:
        raise ValueError(f"expected inputs of dimension {model.layer_dims[0]}, got shape {X.shape}")
    return X


def _forward_cache(model: MLPModel, X: np.ndarray):
    acts = [X]
    h = X
    n_layers = len(model.weights)
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W + b
        h = np.maximum(z, 0.0) if i < n_layers - 1 else z
        acts.append(h)
    return acts  # last entry holds the output logits


def predict(model: MLPModel, X) -> np.ndarray:
    """Output probabilities for a batch, shape (n,)."""
    X = _check_input(model, X)
    return sigmoid(_forward_cache(model, X)[-1][:, 0])


def forward(model: MLPModel, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("forward expects a single input vector")
    return float(predict(model, x)[0])


def bce(p, y):
    """Binary cross-entropy with p clamped to [1e-12, 1 - 1e-12].

    Works elementwise on arrays; returns a float for scalar inputs.
    """
    p = np.clip(np.asarray(p, dtype=float), P_CLAMP, 1.0 - P_CLAMP)
    y = np.asarray(y, dtype=float)
    out = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(out) if out.ndim == 0 else out


def mean_loss(model: MLPModel, X, y) -> float:
    return float(np.mean(bce(predict(model, X), y)))


def grad(model: MLPModel, X, y) -> list[np.ndarray]:
    """Gradients of the mean BCE over the batch, same layout as ``model.params``."""
    X = _check_input(model, X)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"{X.shape[0]} inputs but {y.shape[0]} labels")
    acts = _forward_cache(model, X)
    p = sigmoid(acts[-1][:, 0])
    # d(mean bce)/dz for the sigmoid output; exact while p is inside the clamp
    delta = ((p - y) / X.shape[0])[:, None]
    grads: list[np.ndarray] = []
    for i in range(len(model.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append(acts[i].T @ delta)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0)
    grads.reverse()
    # reversed order is [W1, b1, W2, b2, ...] as required
    return grads


# --- optimizers -----------------------------------------------------------

@dataclass(frozen=True)
class AdamState:
    m: tuple[np.ndarray, ...]
    v: tuple[np.ndarray, ...]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: Sequence[np.ndarray], **hyper) -> "AdamState":
        zeros = tuple(np.zeros_like(p, dtype=float) for p in params)
        return cls(m=zeros, v=zeros, **hyper)


@dataclass(frozen=True)
class AdadeltaState:
    eg2: tuple[np.ndarray, ...]
    edx2: tuple[np.ndarray, ...]
    lr: float = 1.0
    rho: float = 0.95
    eps: float = 1e-6

    @classmethod
    def fresh(cls, params: Sequence[np.ndarray], **hyper) -> "AdadeltaState":
        zeros = tuple(np.zeros_like(p, dtype=float) for p in params)
        return cls(eg2=zeros, edx2=zeros, **hyper)


@dataclass(frozen=True)
class SGDState:
    lr: float = 0.1

    @classmethod
    def fresh(cls, params: Sequence[np.ndarray], **hyper) -> "SGDState":
        return cls(**hyper)


def _check_shapes(a, b):
    if len(a) != len(b) or any(np.shape(x) != np.shape(y) for x, y in zip(a, b)):
        raise ValueError("gradient shapes do not match optimizer state")


def _debiased_ema(prev, x, beta: float, t: int):
    """Raw EMA update and its bias-corrected value at step ``t``.

    The corrected value is computed as a running mean with weight
    (1 - beta) / (1 - beta**t), which is exactly 1 at t = 1, so the first
    corrected estimate equals ``x`` bit for bit.
    """
    raw = beta * prev + (1.0 - beta) * x
    hat_prev = prev / (1.0 - beta ** (t - 1)) if t > 1 else 0.0
    hat = hat_prev + ((1.0 - beta) / (1.0 - beta ** t)) * (x - hat_prev)
    return raw, hat


def adam_moments(state: AdamState, grads: Sequence[np.ndarray]):
    """``(m, v, m_hat, v_hat)`` after folding ``grads`` into ``state``."""
    _check_shapes(state.m, grads)
    t = state.t + 1
    ms, vs, mh, vh = [], [], [], []
    for mi, vi, g in zip(state.m, state.v, grads):
        m, m_hat = _debiased_ema(mi, g, state.beta1, t)
        v, v_hat = _debiased_ema(vi, g * g, state.beta2, t)
        ms.append(m), vs.append(v), mh.append(m_hat), vh.append(v_hat)
    return tuple(ms), tuple(vs), mh, vh


def adam_step(state: AdamState, grads: Sequence[np.ndarray]):
    """One Adam update.  Returns ``(new_state, deltas)`` with deltas to add to the params."""
    m, v, m_hat, v_hat = adam_moments(state, grads)
    deltas = [-state.lr * a / (np.sqrt(b) + state.eps) for a, b in zip(m_hat, v_hat)]
    return replace(state, m=m, v=v, t=state.t + 1), deltas


def adadelta_step(state: AdadeltaState, grads: Sequence[np.ndarray]):
    """One Adadelta update, scaled by ``state.lr`` (1.0 gives the plain method)."""
    _check_shapes(state.eg2, grads)
    rho, eps = state.rho, state.eps
    eg2 = tuple(rho * e + (1.0 - rho) * g * g for e, g in zip(state.eg2, grads))
    dx = [-(np.sqrt(ed + eps) / np.sqrt(e + eps)) * g for ed, e, g in zip(state.edx2, eg2, grads)]
    edx2 = tuple(rho * ed + (1.0 - rho) * d * d for ed, d in zip(state.edx2, dx))
    deltas = [state.lr * d for d in dx]
    return replace(state, eg2=eg2, edx2=edx2), deltas


def sgd_step(state: SGDState, grads: Sequence[np.ndarray]):
    return state, [-state.lr * g for g in grads]


_OPTIMIZERS = {
    "adam": (AdamState, adam_step),
    "adadelta": (AdadeltaState, adadelta_step),
    "sgd": (SGDState, sgd_step),
}


@dataclass(frozen=True)
class OptimizerConfig:
    name: str = "adam"
    lr: float = 1e-3
    # extra hyperparameters (beta1, beta2, eps, rho); unset ones use the defaults
    hyper: dict = field(default_factory=dict)
    batch_size: int | None = None  # None means full batch

    def __post_init__(self):
        if self.name not in _OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.name!r}; choose from {sorted(_OPTIMIZERS)}")
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ValueError("learning rate must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        allowed = {"adam": {"beta1", "beta2", "eps"}, "adadelta": {"rho", "eps"}, "sgd": set()}
        extra = set(self.hyper) - allowed[self.name]
        if extra:
            raise ValueError(f"unsupported hyperparameters for {self.name}: {sorted(extra)}")

    def init_state(self, params):
        cls, _ = _OPTIMIZERS[self.name]
        return cls.fresh(params, lr=self.lr, **self.hyper)

    def step(self, state, grads):
        return _OPTIMIZERS[self.name][1](state, grads)

    def to_dict(self) -> dict:
        return {"name": self.name, "lr": self.lr, "hyper": dict(self.hyper),
                "batch_size": self.batch_size}


@dataclass(frozen=True)
class TrainResult:
    """Loss history of one run.

    ``epochs`` holds the (1-based) epochs at which losses were recorded.  The
    arrays may hold fewer than two points (e.g. zero epochs), in which case
    they cannot be turned into a LearningCurve.
    """

    epochs: np.ndarray
    train_loss: np.ndarray
    val_loss: np.ndarray
    initial_val_loss: float
    halted: bool
    model: MLPModel

    def train_curve(self, label: str = "train") -> LearningCurve:
        return LearningCurve(self.epochs, self.train_loss, label=label)

    def val_curve(self, label: str = "val") -> LearningCurve:
        return LearningCurve(self.epochs, self.val_loss, label=label)


def train(model: MLPModel, train_set, val_set, opt: OptimizerConfig, epochs: int,
          eval_every: int = 1, seed: int = 0, halt_factor: float | None = None,
          halt_patience: int = 50) -> TrainResult:
    """Train ``model`` and record train/val mean BCE every ``eval_every`` epochs.

    ``train_set``/``val_set`` are ``(X, y)`` pairs (or anything with ``X`` and
    ``y`` attributes).  When ``halt_factor`` is set, training stops once the
    validation loss has stayed above ``halt_factor`` times its initial value
    for ``halt_patience`` consecutive epochs; a non-finite loss also halts.
    Halting requires the val loss every epoch, so it is computed every epoch in
    that mode (only every ``eval_every``-th value is recorded).
    """
    Xtr, ytr = _unpack(train_set)
    Xva, yva = _unpack(val_set)
    if len(Xtr) == 0 or len(Xva) == 0:
        raise ValueError("datasets must be nonempty")
    if epochs < 0 or eval_every < 1:
        raise ValueError("need epochs >= 0 and eval_every >= 1")
    _check_input(model, Xtr)
    _check_input(model, Xva)

    rng = np.random.default_rng(seed)
    params = [p.copy() for p in model.params]
    state = opt.init_state(params)
    n = len(Xtr)
    bs = n if opt.batch_size is None else min(opt.batch_size, n)

    current = model.with_params(params)
    initial_val = mean_loss(model, Xva, yva)
    rec_t, rec_tr, rec_va = [], [], []
    above = 0
    halted = False
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n) if bs < n else None
        for start in range(0, n, bs):
            idx = order[start:start + bs] if order is not None else slice(None)
            g = grad(current, Xtr[idx], ytr[idx])
            state, deltas = opt.step(state, g)
            for p, d in zip(params, deltas):
                p += d

        record = epoch % eval_every == 0
        if not (record or halt_factor is not None):
            continue
        val = mean_loss(current, Xva, yva)
        if not math.isfinite(val):
            halted = True
            break
        if record:
            tr = mean_loss(current, Xtr, ytr)
            if not math.isfinite(tr):
                halted = True
                break
            rec_t.append(float(epoch))
            rec_tr.append(tr)
            rec_va.append(val)
        if halt_factor is not None:
            above = above + 1 if val > halt_factor * initial_val else 0
            if above >= halt_patience:
                halted = True
                break

    final = current.with_params([p.copy() for p in params])
    return TrainResult(np.array(rec_t), np.array(rec_tr), np.array(rec_va),
                       initial_val, halted, final)


def _unpack(ds):
    if hasattr(ds, "X") and hasattr(ds, "y"):
        X, y = ds.X, ds.y
    else:
        X, y = ds
    return np.asarray(X, dtype=float), np.asarray(y, dtype=float).reshape(-1)
