"""Transfer-learning strategies over pretrained models."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from ._rng import child_rng
from .datasets import Dataset, DistributionSpec
from .errors import ConfigError, EmptyDataError, InputShapeError, StrategyError
from .nn_core import (
    Model,
    TrainConfig,
    epoch_batches,
    epoch_lr,
    features,
    init_model,
    softmax,
    train,
)

STRATEGY_KINDS = ("feature_extraction", "last_k_layers", "full")


@dataclass
class FinetuneStrategy:
    kind: str = "feature_extraction"
    k: int | None = None
    head_init_seed: int = 0

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise StrategyError(f"unknown finetune strategy {self.kind!r}")
        if self.kind == "last_k_layers" and (self.k is None or self.k < 1):
            raise StrategyError("last_k_layers needs a positive k")

    def trainable_layers(self, n_layers: int) -> int:
        if self.kind == "feature_extraction":
            return 1
        if self.kind == "full":
            return n_layers
        if self.k > n_layers:
            raise StrategyError(f"k={self.k} exceeds the model's {n_layers} layers")
        return self.k

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DPConfig:
    """DP-SGD parameters. ``declared_*`` values are labels, not computed."""

    clip_norm: float = 5.0
    noise_multiplier: float = 1.0
    lot_size: int = 64
    epochs: int = 20
    declared_epsilon: float | None = None
    declared_delta: float | None = None

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ConfigError("clip_norm must be positive")
        if self.noise_multiplier < 0:
            raise ConfigError("noise_multiplier must be nonnegative")
        if self.lot_size <= 0 or self.epochs < 0:
            raise ConfigError("lot_size must be positive and epochs nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


def pretrain(
    spec_PT: DistributionSpec,
    subset: Dataset,
    cfg: TrainConfig,
    hidden: Sequence[int] = (64, 32),
    dtype=np.float32,
) -> Model:
    """Train a freshly initialised classifier on ``subset``."""
    if len(subset) == 0:
        raise EmptyDataError("pretraining subset is empty")
    dims = [spec_PT.feature_dim, *hidden, spec_PT.n_labels]
    model = init_model(dims, cfg.seed, dtype=dtype)
    return train(model, subset, cfg)


def replace_head(g: Model, new_K: int, seed: int) -> Model:
    """Copy ``g`` with its final layer swapped for a fresh ``[hidden -> new_K]`` one."""
    if new_K <= 0:
        raise InputShapeError("new class count must be positive")
    fan_in = g.weights[-1].shape[1]
    rng = child_rng(seed, "head")
    head = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(new_K, fan_in)).astype(g.dtype)
    out = g.copy()
    out.weights[-1] = head
    out.biases[-1] = np.zeros(new_K, dtype=g.dtype)
    out.freeze_flags[-1] = False
    return out


def finetune(
    g: Model,
    D_FT: Dataset,
    strategy: FinetuneStrategy,
    cfg: TrainConfig,
    *,
    n_classes: int | None = None,
) -> Model:
    """New head, freeze per ``strategy``, then train for ``cfg.epochs``.

    The head width defaults to the largest label in ``D_FT`` plus one.
    """
    if len(D_FT) == 0:
        raise EmptyDataError("finetuning data is empty")
    K = n_classes or int(D_FT.y.max()) + 1
    if int(D_FT.y.max()) >= K:
        raise ConfigError("finetuning labels exceed the requested head width")
    n_train = strategy.trainable_layers(g.n_layers)
    model = replace_head(g, K, strategy.head_init_seed)
    model.freeze_flags = [i < g.n_layers - n_train for i in range(g.n_layers)]
    return train(model, D_FT, cfg)


def dp_finetune(
    g: Model,
    D_FT: Dataset,
    dp: DPConfig,
    cfg: TrainConfig,
    *,
    n_classes: int | None = None,
    head_init_seed: int = 0,
    noise_seed: int | None = None,
    on_step: Callable[[np.ndarray], None] | None = None,
) -> Model:
    """Train only a fresh head with DP-SGD.

    Each example's head gradient is clipped to L2 norm ``dp.clip_norm``; the
    clipped sum of a lot receives ``N(0, (sigma * C)^2)`` noise per
    coordinate and is divided by the lot size. Lots are consecutive slices of
    the same seeded shuffle plain SGD uses, so with ``sigma = 0`` and a
    non-binding clip the updates coincide with head-only SGD.

    ``on_step`` receives the clipped per-example norms of every lot.
    """
    n = len(D_FT)
    if n == 0:
        raise EmptyDataError("finetuning data is empty")
    if dp.lot_size > n:
        raise ConfigError(f"lot_size {dp.lot_size} exceeds dataset size {n}")
    K = n_classes or int(D_FT.y.max()) + 1
    model = replace_head(g, K, head_init_seed)
    model.freeze_flags = [True] * (g.n_layers - 1) + [False]

    A = features(model, D_FT.X)
    y = D_FT.y
    W, b = model.weights[-1], model.biases[-1]
    dtype = W.dtype.type
    C = dp.clip_norm
    noise_rng = child_rng(cfg.seed if noise_seed is None else noise_seed, "dp-noise")
    sched = cfg.replace(epochs=max(dp.epochs, 1), batch_size=dp.lot_size)
    wd = dtype(cfg.weight_decay)

    for epoch in range(dp.epochs):
        lr = dtype(epoch_lr(sched, epoch))
        for idx in epoch_batches(n, dp.lot_size, cfg.seed, epoch):
            a = A[idx].astype(np.float64)
            delta = softmax(a @ W.T.astype(np.float64) + b.astype(np.float64))
            delta[np.arange(len(idx)), y[idx]] -= 1.0
            # ||outer(delta, a)||^2 + ||delta||^2 per example
            norms = np.linalg.norm(delta, axis=1) * np.sqrt(np.sum(a * a, axis=1) + 1.0)
            factor = np.minimum(1.0, C / np.maximum(norms, 1e-300))
            if on_step is not None:
                on_step(norms * factor)
            d = delta * factor[:, None]
            gW = d.T @ a
            gb = d.sum(axis=0)
            if dp.noise_multiplier > 0:
                std = dp.noise_multiplier * C
                gW = gW + noise_rng.normal(0.0, std, size=gW.shape)
                gb = gb + noise_rng.normal(0.0, std, size=gb.shape)
            gW = (gW / len(idx)).astype(W.dtype)
            gb = (gb / len(idx)).astype(W.dtype)
            W -= lr * (gW + wd * W)
            b -= lr * (gb + wd * b)
    return model


def trainable_fraction(model: Model) -> float:
    return model.n_params(trainable_only=True) / model.n_params()
