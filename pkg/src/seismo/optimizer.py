"""MSE loss, Adam and the mini-batch training loop."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import SequenceData
from .errors import Diverged, InvalidConfig, LengthMismatch, ShapeMismatch
from .network import Model, backward, forward, predict

log = logging.getLogger(__name__)


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient ``2 (pred - target) / n``."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        if pred.size != target.size:
            raise LengthMismatch(f"prediction has {pred.size} values, target {target.size}")
        target = target.reshape(pred.shape)
    diff = pred - target
    n = diff.size
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray], **hyper) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **hyper,
        )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState):
    """Bias-corrected Adam update, applied to ``params`` in place.

    Returns ``(params, state)`` for convenience; both are the mutated inputs.
    """
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ShapeMismatch("parameters, gradients and Adam moments must share names")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float | None) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is not None and max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 300
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 20
    grad_clip: float | None = 5.0
    seed: int = 0
    time_limit_s: float | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1", "train.batch_size")
        if self.max_epochs < 0:
            raise InvalidConfig("max_epochs must be >= 0", "train.max_epochs")
        if not self.lr > 0:
            raise InvalidConfig("lr must be positive", "train.lr")
        if self.patience < 1:
            raise InvalidConfig("patience must be >= 1", "train.patience")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class History:
    epochs: list[int] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    best_epoch: int | None = None
    stopped_early: bool = False

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_mse", "val_mse"])
            for e, tr, va in zip(self.epochs, self.train_mse, self.val_mse):
                w.writerow([e, repr(tr), repr(va)])


def evaluate_loss(model: Model, data: SequenceData, batch_size: int = 256) -> float:
    pred = predict(model, data.gm, data.struct, batch_size=batch_size)
    return mse_loss(pred, data.target)[0]


def train(
    model: Model,
    train_data: SequenceData,
    val_data: SequenceData | None,
    cfg: TrainConfig,
) -> tuple[Model, History]:
    """Train ``model`` in place and return it with the loss history.

    Each epoch visits the training set in a seeded random order; gradients are
    averaged over the batch, clipped to ``cfg.grad_clip`` global norm and
    applied with Adam. After training the parameters from the epoch with the
    lowest validation loss (training loss when no validation set is given) are
    restored.
    """
    history = History()
    if cfg.max_epochs == 0 or len(train_data) == 0:
        return model, history

    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    state = AdamState.zeros_like(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    best = math.inf
    best_params = {k: p.copy() for k, p in params.items()}
    since_best = 0
    n = len(train_data)
    started = time.monotonic()

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            batch = train_data.subset(idx)
            pred, cache = forward(model, batch.gm, batch.struct)
            loss, dpred = mse_loss(pred, batch.target)
            if not math.isfinite(loss):
                raise Diverged(epoch, loss)
            grads = backward(model, cache, dpred)
            clip_global_norm(grads, cfg.grad_clip)
            adam_step(params, grads, state)
            total += loss * len(idx)
        train_mse = total / n
        val_mse = evaluate_loss(model, val_data) if val_data is not None and len(val_data) else train_mse
        if not (math.isfinite(train_mse) and math.isfinite(val_mse)):
            raise Diverged(epoch, train_mse if not math.isfinite(train_mse) else val_mse)
        history.epochs.append(epoch)
        history.train_mse.append(train_mse)
        history.val_mse.append(val_mse)
        log.info("epoch %d train_mse=%.6g val_mse=%.6g", epoch, train_mse, val_mse)

        if val_mse < best:
            best = val_mse
            history.best_epoch = epoch
            since_best = 0
            for k, p in params.items():
                best_params[k][...] = p
        else:
            since_best += 1
            if since_best >= cfg.patience:
                history.stopped_early = True
                break
        if cfg.time_limit_s is not None and time.monotonic() - started > cfg.time_limit_s:
            log.warning("time limit reached after epoch %d", epoch)
            break

    model.load_parameters(best_params)
    return model, history
