"""Feed-forward classifier with a from-scratch SGD training loop.

The model is a stack of affine layers with ReLU between hidden layers. Each
layer carries a freeze flag; frozen layers are never written by any training
routine, which is what the transfer-learning strategies build on.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ._rng import child_rng
from .errors import (
    CheckpointError,
    ConfigError,
    EmptyDataError,
    InputShapeError,
    LabelError,
    NumericInputError,
    ScheduleError,
)

SCHEMA_VERSION = 1


@dataclass
class Model:
    """Layered classifier holding weights ``[out x in]`` and biases ``[out]``."""

    weights: list
    biases: list
    freeze_flags: list = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.freeze_flags is None:
            self.freeze_flags = [False] * len(self.weights)
        self.freeze_flags = [bool(f) for f in self.freeze_flags]
        if not (len(self.weights) == len(self.biases) == len(self.freeze_flags)):
            raise InputShapeError("weights, biases and freeze_flags differ in length")
        if not self.weights:
            raise InputShapeError("a model needs at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise InputShapeError(f"layer {i}: bad weight/bias shapes {w.shape}, {b.shape}")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise InputShapeError(
                    f"layer {i} expects {w.shape[1]} inputs, "
                    f"layer {i - 1} emits {self.weights[i - 1].shape[0]}"
                )

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim] + [w.shape[0] for w in self.weights]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def n_params(self, trainable_only: bool = False) -> int:
        return sum(
            w.size + b.size
            for w, b, frozen in zip(self.weights, self.biases, self.freeze_flags)
            if not (trainable_only and frozen)
        )

    def copy(self) -> "Model":
        return Model(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.freeze_flags),
            self.schema_version,
        )


def models_equal(a: Model, b: Model) -> bool:
    """Bit-exact equality of parameters, flags and version."""
    if a.layer_dims != b.layer_dims or a.freeze_flags != b.freeze_flags:
        return False
    if a.schema_version != b.schema_version:
        return False
    for p, q in zip(a.weights + a.biases, b.weights + b.biases):
        if p.dtype != q.dtype or p.tobytes() != q.tobytes():
            return False
    return True


def init_model(layer_dims: Sequence[int], seed: int, dtype=np.float32) -> Model:
    """He-initialised MLP for ``layer_dims = [input, hidden..., classes]``."""
    if len(layer_dims) < 2 or any(int(d) <= 0 for d in layer_dims):
        raise InputShapeError(f"invalid layer dims {layer_dims}")
    rng = child_rng(seed, "init")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        weights.append(w.astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return Model(weights, biases)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 0.1
    weight_decay: float = 1e-5
    lr_schedule: str = "cosine"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")

    def replace(self, **changes) -> "TrainConfig":
        out = copy.copy(self)
        for k, v in changes.items():
            setattr(out, k, v)
        out.__post_init__()
        return out


# -- forward pass ---------------------------------------------------------


def _as_input(model: Model, x) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] != model.input_dim or x.ndim not in (1, 2):
        raise InputShapeError(f"expected input dim {model.input_dim}, got shape {x.shape}")
    return x.astype(model.dtype, copy=False)


def forward(model: Model, x) -> np.ndarray:
    """Pre-softmax logits for one input vector or a batch of rows."""
    a = _as_input(model, x)
    last = model.n_layers - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        a = a @ w.T + b
        if i < last:
            a = np.maximum(a, 0)
    return a


def features(model: Model, x) -> np.ndarray:
    """Activations feeding the final (classification) layer."""
    a = _as_input(model, x)
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        a = np.maximum(a @ w.T + b, 0)
    return a


def softmax(logits) -> np.ndarray:
    """Max-shifted softmax over the last axis, computed in float64."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericInputError("softmax received non-finite logits")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_proba(model: Model, x) -> np.ndarray:
    return softmax(forward(model, x))


def cross_entropy(pred, y: int) -> float:
    """Negative log-probability of class ``y``."""
    pred = np.asarray(pred, dtype=np.float64)
    if not 0 <= int(y) < pred.shape[-1]:
        raise LabelError(f"label {y} outside [0, {pred.shape[-1]})")
    return float(-np.log(pred[int(y)]))


def accuracy(model: Model, X, y) -> float:
    return float(np.mean(np.argmax(forward(model, X), axis=-1) == np.asarray(y)))


# -- gradients ------------------------------------------------------------


def loss_and_grads(model: Model, X, y, *, all_layers: bool = False):
    """Mean cross-entropy over a batch and its parameter gradients.

    Returns ``(loss, grads)`` where ``grads[i]`` is ``(dW, db)`` for layer i,
    or None for layers below the lowest trainable one (backprop stops there
    unless ``all_layers`` is set).
    """
    X = _as_input(model, X)
    y = np.asarray(y)
    n = X.shape[0]
    if np.any((y < 0) | (y >= model.n_classes)):
        raise LabelError(f"labels outside [0, {model.n_classes})")

    acts = [X]
    pre = []
    last = model.n_layers - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = acts[-1] @ w.T + b
        pre.append(z)
        acts.append(np.maximum(z, 0) if i < last else z)

    p = softmax(acts[-1])
    loss = float(-np.mean(np.log(p[np.arange(n), y])))

    if all_layers:
        lowest = 0
    else:
        trainable = [i for i, f in enumerate(model.freeze_flags) if not f]
        lowest = trainable[0] if trainable else model.n_layers

    grads = [None] * model.n_layers
    delta = p
    delta[np.arange(n), y] -= 1.0
    delta = (delta / n).astype(model.dtype)
    for i in range(last, lowest - 1, -1):
        grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
        if i > lowest:
            delta = (delta @ model.weights[i]) * (pre[i - 1] > 0)
    return loss, grads


# -- optimisation ---------------------------------------------------------


def cosine_lr(eta0: float, epoch: int, total_epochs: int) -> float:
    """Half-cosine decay from ``eta0`` towards 0 over ``total_epochs``."""
    if not 0 <= epoch < total_epochs:
        raise ScheduleError(f"epoch {epoch} outside [0, {total_epochs})")
    return eta0 * (1.0 + math.cos(math.pi * epoch / total_epochs)) / 2.0


def epoch_lr(cfg: TrainConfig, epoch_index: int) -> float:
    if cfg.lr_schedule == "cosine":
        return cosine_lr(cfg.learning_rate, epoch_index, max(cfg.epochs, 1))
    return cfg.learning_rate


def epoch_batches(n: int, batch_size: int, seed: int, epoch_index: int):
    """Minibatch index arrays over a seeded shuffle of ``range(n)``."""
    perm = child_rng(seed, "shuffle", epoch_index).permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def _check_data(model: Model, X, y, batch_size: int):
    if len(y) == 0:
        raise EmptyDataError("training data is empty")
    if X.shape[1] != model.input_dim:
        raise InputShapeError(f"data dim {X.shape[1]} != model input dim {model.input_dim}")
    if batch_size > len(y):
        raise ConfigError(f"batch_size {batch_size} exceeds dataset size {len(y)}")


def sgd_epoch(model: Model, data, cfg: TrainConfig, epoch_index: int) -> Model:
    """One epoch of minibatch SGD with weight decay; returns a new model."""
    X, y = np.asarray(data.X), np.asarray(data.y)
    _check_data(model, X, y, cfg.batch_size)
    out = model.copy()
    if all(out.freeze_flags):
        return out
    lr = out.dtype.type(epoch_lr(cfg, epoch_index))
    wd = out.dtype.type(cfg.weight_decay)
    for idx in epoch_batches(len(y), cfg.batch_size, cfg.seed, epoch_index):
        _, grads = loss_and_grads(out, X[idx], y[idx])
        for i, g in enumerate(grads):
            if g is None or out.freeze_flags[i]:
                continue
            dw, db = g
            out.weights[i] -= lr * (dw + wd * out.weights[i])
            out.biases[i] -= lr * (db + wd * out.biases[i])
    return out


def train(model: Model, data, cfg: TrainConfig) -> Model:
    """Run ``cfg.epochs`` epochs of :func:`sgd_epoch`."""
    if len(data.y) == 0:
        raise EmptyDataError("training data is empty")
    out = model.copy()
    for epoch in range(cfg.epochs):
        out = sgd_epoch(out, data, cfg, epoch)
    return out


# -- checkpoints ----------------------------------------------------------


def model_to_dict(model: Model) -> dict:
    return {
        "schema_version": model.schema_version,
        "dtype": np.dtype(model.dtype).name,
        "layer_dims": model.layer_dims,
        "freeze_flags": list(model.freeze_flags),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }


def model_from_dict(doc: dict) -> Model:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise CheckpointError(f"unsupported checkpoint schema_version {version!r}")
    try:
        dtype = np.dtype(doc.get("dtype", "float32"))
        weights = [np.asarray(w, dtype=dtype) for w in doc["weights"]]
        biases = [np.asarray(b, dtype=dtype) for b in doc["biases"]]
        dims = [int(d) for d in doc["layer_dims"]]
        flags = doc["freeze_flags"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    if len(dims) != len(weights) + 1:
        raise CheckpointError("layer_dims inconsistent with layer count")
    for i, w in enumerate(weights):
        if w.ndim != 2 or w.shape != (dims[i + 1], dims[i]):
            raise CheckpointError(f"layer {i} weight shape does not match layer_dims")
    try:
        return Model(weights, biases, flags, version)
    except InputShapeError as exc:
        raise CheckpointError(str(exc)) from exc


def save_model(model: Model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path) -> Model:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return model_from_dict(doc)
