"""Small dense feed-forward nets trained with backprop and Adam, in numpy.

Weights are stored as ``(fan_in, fan_out)`` matrices and inputs as row
vectors, so a batch ``X`` of shape ``(B, L_in)`` maps through ``X @ W + b``.
Nets work in a scaled space (counts divided by ``n_max``); :func:`predict`
converts outputs back to node counts.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

FORMAT_VERSION = 1

RELU, SIGMOID, LINEAR = "relu", "sigmoid", "linear"


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


_ACTIVATE = {
    RELU: lambda z: np.maximum(z, 0.0),
    SIGMOID: _sigmoid,
    LINEAR: lambda z: z,
}

# derivative expressed through the pre-activation z and activation a
_DERIV = {
    RELU: lambda z, a: (z > 0).astype(z.dtype),
    SIGMOID: lambda z, a: a * (1.0 - a),
    LINEAR: lambda z, a: np.ones_like(z),
}


class NetFormatError(ValueError):
    """Malformed weight file."""


class NetVersionError(NetFormatError):
    """Weight file written by an incompatible format version."""


@dataclass
class DenseNet:
    layer_dims: tuple[int, ...]
    activations: tuple[str, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    scaling: dict = field(default_factory=lambda: {"n_max": 1.0, "T": 1})

    @property
    def input_size(self) -> int:
        return self.layer_dims[0]

    @property
    def output_size(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_max(self) -> float:
        return float(self.scaling.get("n_max", 1.0))

    @property
    def dtype(self):
        return self.weights[0].dtype

    def copy(self) -> "DenseNet":
        return copy.deepcopy(self)

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def digest(self) -> str:
        h = hashlib.sha256()
        for p in self.params():
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()


def _check_arch(layer_dims: Sequence[int], activations: Sequence[str]):
    if len(layer_dims) < 2:
        raise ValueError("need at least an input and an output dimension")
    if len(activations) != len(layer_dims) - 1:
        raise ValueError(
            f"{len(layer_dims) - 1} layers but {len(activations)} activations")
    if any(int(d) < 1 for d in layer_dims):
        raise ValueError(f"layer dimensions must be positive: {tuple(layer_dims)}")
    unknown = set(activations) - set(_ACTIVATE)
    if unknown:
        raise ValueError(f"unknown activations {sorted(unknown)}")


def estimator_architecture(input_size: int, output_size: int = 1):
    """Input layer of width L = L_in with ReLU, two sigmoid layers of L/2, linear head."""
    half = max(1, input_size // 2)
    dims = (input_size, input_size, half, half, output_size)
    return dims, (RELU, SIGMOID, SIGMOID, LINEAR)


def init_net(layer_dims: Sequence[int], activations: Sequence[str], seed: int,
             scaling: dict | None = None, dtype=np.float64) -> DenseNet:
    """Glorot-uniform weights, zero biases."""
    _check_arch(layer_dims, activations)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return DenseNet(tuple(int(d) for d in layer_dims), tuple(activations), weights, biases,
                    dict(scaling or {"n_max": 1.0, "T": layer_dims[-1]}))


def _as_batch(net: DenseNet, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(getattr(x, "values", x), dtype=net.dtype)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != net.input_size:
        raise ValueError(f"expected input length {net.input_size}, got {x.shape[1]}")
    return x, single


def forward_cached(net: DenseNet, x):
    """Forward pass keeping (inputs, pre-activations, activations) for backward."""
    a, single = _as_batch(net, x)
    inputs, pre = [], []
    for W, b, act in zip(net.weights, net.biases, net.activations):
        inputs.append(a)
        z = a @ W + b
        pre.append(z)
        a = _ACTIVATE[act](z)
    return a, (inputs, pre, single)


def forward(net: DenseNet, x) -> np.ndarray:
    """Raw (scaled-space) output; a 1-D input gives a 1-D output."""
    a, single = _as_batch(net, x)
    for W, b, act in zip(net.weights, net.biases, net.activations):
        a = _ACTIVATE[act](a @ W + b)
    return a[0] if single else a


def predict(net: DenseNet, x) -> np.ndarray:
    """Output in node-count units."""
    return forward(net, x).astype(float) * net.n_max


def backward(net: DenseNet, out: np.ndarray, cache, grad_out) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-layer ``(dW, db)`` for upstream gradient ``grad_out`` of the loss w.r.t. ``out``."""
    inputs, pre, single = cache
    g = np.asarray(grad_out, dtype=net.dtype)
    if g.ndim == 1:
        g = g[None, :]
    grads = []
    a = out if out.ndim == 2 else out[None, :]
    for i in reversed(range(len(net.weights))):
        z = pre[i]
        dz = g * _DERIV[net.activations[i]](z, a)
        grads.append((inputs[i].T @ dz, dz.sum(axis=0)))
        if i:
            g = dz @ net.weights[i].T
            a = inputs[i]
    grads.reverse()
    return grads


# -- losses --------------------------------------------------------------------

def _sq(pred, target) -> np.ndarray:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return np.sum(np.atleast_1d(diff * diff), axis=-1)


def loss_mse(pred, target) -> float:
    """Squared Euclidean distance; averaged over rows for a batch."""
    return float(np.mean(_sq(pred, target)))


def loss_distill(student_pred, teacher_pred, target, alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * loss_mse(student_pred, target) + (1.0 - alpha) * loss_mse(teacher_pred, target)


def distill_grad(student_pred, target, alpha: float = 1.0) -> np.ndarray:
    """Gradient of the batch-mean distillation loss w.r.t. the student output.

    The teacher term is a constant for the student, so only the data term
    contributes.
    """
    student_pred = np.asarray(student_pred)
    batch = student_pred.shape[0] if student_pred.ndim == 2 else 1
    return 2.0 * alpha * (student_pred - target) / batch


# -- optimisation --------------------------------------------------------------

class Adam:
    def __init__(self, net: DenseNet, learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = learning_rate, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in net.params()]
        self.v = [np.zeros_like(p) for p in net.params()]
        self.t = 0

    def step(self, net: DenseNet, grads) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        step = self.lr * math.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        flat = [g for pair in grads for g in pair]
        for p, g, m, v in zip(net.params(), flat, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p -= (step * m / (np.sqrt(v) + self.eps)).astype(p.dtype, copy=False)


def fit_single(net: DenseNet, x, target, learning_rate: float = 1e-3, steps: int = 1,
               alpha: float = 1.0, optimizer: Adam | None = None) -> DenseNet:
    """Online update on one sample, in place. Pass ``optimizer`` to keep Adam state."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    opt = optimizer or Adam(net, learning_rate)
    target = np.asarray(target, dtype=net.dtype).reshape(1, -1)
    for _ in range(steps):
        out, cache = forward_cached(net, x)
        opt.step(net, backward(net, out, cache, distill_grad(out, target, alpha)))
    return net


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 500
    early_stop_epoch: int | None = None
    mixing_alpha: float = 1.0
    train_fraction: float = 0.8
    seed: int = 0
    patience: int | None = None
    restore_best: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if self.early_stop_epoch is not None and self.early_stop_epoch < 1:
            raise ValueError("early_stop_epoch must be >= 1")
        if not 0.0 <= self.mixing_alpha <= 1.0:
            raise ValueError("mixing_alpha must lie in [0, 1]")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1")

    @property
    def epoch_cap(self) -> int:
        if self.early_stop_epoch is None:
            return self.max_epochs
        return min(self.max_epochs, self.early_stop_epoch)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    test_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def epochs(self) -> int:
        return len(self.train_loss)


def split_indices(n: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_train = min(max(1, int(round(train_fraction * n))), max(1, n - 1))
    return perm[:n_train], perm[n_train:]


def fit_dataset(net: DenseNet, x, y, config: TrainConfig, teacher_pred=None,
                augment=None) -> tuple[DenseNet, TrainHistory]:
    """Mini-batch Adam on a shuffled train/test split (in place).

    ``x`` and ``y`` live in scaled space. With ``teacher_pred`` the objective
    is the distillation loss at ``config.mixing_alpha``; the reported losses
    are the same objective. ``augment(batch, rng)`` may return a transformed
    copy of each training batch (targets unchanged).
    """
    x = np.asarray(x, dtype=net.dtype)
    y = np.asarray(y, dtype=net.dtype).reshape(len(x), -1)
    if len(x) == 0:
        raise ValueError("cannot train on an empty dataset")
    alpha = config.mixing_alpha if teacher_pred is not None else 1.0
    if teacher_pred is not None:
        teacher_pred = np.asarray(teacher_pred, dtype=float).reshape(y.shape)
    train_idx, test_idx = split_indices(len(x), config.train_fraction, config.seed)
    rng = np.random.default_rng(config.seed + 1)
    opt = Adam(net, config.learning_rate)

    def objective(idx, out):
        if teacher_pred is None:
            return loss_mse(out, y[idx])
        return loss_distill(out, teacher_pred[idx], y[idx], alpha)

    history = TrainHistory()
    best, best_params, waited = math.inf, None, 0
    for epoch in range(config.epoch_cap):
        order = rng.permutation(train_idx)
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            xb = x[idx] if augment is None else augment(x[idx], rng)
            out, cache = forward_cached(net, xb)
            total += objective(idx, out) * len(idx)
            opt.step(net, backward(net, out, cache, distill_grad(out, y[idx], alpha)))
        history.train_loss.append(total / len(order))
        if len(test_idx):
            test = objective(test_idx, forward(net, x[test_idx]))
        else:
            test = history.train_loss[-1]
        history.test_loss.append(test)
        if test < best:
            best, waited, history.best_epoch = test, 0, epoch
            if config.restore_best:
                best_params = [p.copy() for p in net.params()]
        else:
            waited += 1
            if config.patience is not None and waited >= config.patience:
                break
    if best_params is not None:
        for p, saved in zip(net.params(), best_params):
            p[...] = saved
    return net, history


# -- serialisation -------------------------------------------------------------

def net_to_dict(net: DenseNet) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "layer_dims": list(net.layer_dims),
        "activations": list(net.activations),
        "dtype": np.dtype(net.dtype).name,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "scaling": dict(net.scaling),
    }


def net_from_dict(d: dict) -> DenseNet:
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise NetVersionError(f"unsupported format_version {version!r}, expected {FORMAT_VERSION}")
    try:
        dims, acts = tuple(d["layer_dims"]), tuple(d["activations"])
        dtype = np.dtype(d.get("dtype", "float64"))
        weights = [np.asarray(w, dtype=dtype).reshape(a, b)
                   for w, a, b in zip(d["weights"], dims[:-1], dims[1:])]
        biases = [np.asarray(b, dtype=dtype).reshape(n) for b, n in zip(d["biases"], dims[1:])]
        _check_arch(dims, acts)
    except (KeyError, TypeError, ValueError) as exc:
        raise NetFormatError(f"bad weight file contents: {exc}") from exc
    if len(weights) != len(dims) - 1 or len(biases) != len(dims) - 1:
        raise NetFormatError("layer count does not match layer_dims")
    return DenseNet(dims, acts, weights, biases, dict(d.get("scaling", {})))


def save_net(net: DenseNet, path) -> None:
    Path(path).write_text(json.dumps(net_to_dict(net)))


def load_net(path) -> DenseNet:
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetFormatError(f"{path}: parse error at line {exc.lineno} column {exc.colno} "
                             f"(char {exc.pos})") from exc
    return net_from_dict(d)
