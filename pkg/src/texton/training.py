"""SGD with momentum, cosine schedules, the training loop and evaluation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import functional as F
from .data import AugmentConfig, DatasetManifest, augment_train, channel_stats, eval_views, \
    resize_short_side
from .tensor import Parameter, Tensor, no_grad

log = logging.getLogger(__name__)

METRICS_HEADER = ["run_id", "epoch", "lr", "train_loss", "test_acc"]


class NonFiniteGradientError(FloatingPointError):
    pass


class TrainingDiverged(FloatingPointError):
    def __init__(self, batch_index: int, loss: float):
        super().__init__(f"non-finite loss {loss} at batch {batch_index}")
        self.batch_index = batch_index


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    lr_min: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 0.0
    scheduler: str = "cosine_warm_restarts"
    t0_epochs: int = 10
    t_mult: int = 2
    five_crop_train: bool = False
    five_crop_eval: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("need lr > 0, epochs >= 1 and batch_size >= 1")
        if self.scheduler not in ("cosine", "cosine_warm_restarts"):
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if self.t0_epochs < 1 or self.t_mult < 1:
            raise ValueError("t0_epochs and t_mult must be >= 1")


# Per-dataset protocols used for the published runs.
PROTOCOLS = {
    "kth": dict(epochs=30, batch_size=32, lr=5e-3, scheduler="cosine"),
    "fmd": dict(epochs=30, batch_size=16, lr=1e-3, scheduler="cosine_warm_restarts"),
    "dtd": dict(epochs=30, batch_size=64, lr=1e-2, scheduler="cosine", five_crop_train=True),
    "minc": dict(epochs=20, batch_size=64, lr=5e-3, scheduler="cosine_warm_restarts"),
    "gtos": dict(epochs=20, batch_size=64, lr=5e-3, scheduler="cosine", five_crop_train=True),
    "gtos-m": dict(epochs=20, batch_size=128, lr=5e-2, scheduler="cosine_warm_restarts"),
}


def protocol(name: str, **overrides) -> TrainConfig:
    params = dict(PROTOCOLS[name.lower()])
    params.update(overrides)
    return TrainConfig(**params)


# -- optimisation -----------------------------------------------------------
@dataclass
class OptimizerState:
    velocity: dict[int, np.ndarray] = field(default_factory=dict)
    step: int = 0


def sgd_step(params: Sequence[Parameter], state: OptimizerState, lr: float,
             momentum: float = 0.9, weight_decay: float = 0.0) -> None:
    """v <- momentum * v + g ;  w <- w - lr * v   (in place, using ``p.grad``)."""
    for p in params:
        if not np.isfinite(p.grad).all():
            raise NonFiniteGradientError(f"non-finite gradient in parameter {p.name!r}")
    for i, p in enumerate(params):
        g = p.grad if not weight_decay else p.grad + weight_decay * p.data
        v = state.velocity.get(i)
        v = g.copy() if v is None else momentum * v + g
        state.velocity[i] = v
        p.data -= (lr * v).astype(p.dtype, copy=False)
    state.step += 1


def cosine_lr(t: float, period: float, lr_max: float, lr_min: float = 0.0) -> float:
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / period))


def lr_schedule(step: int, config: TrainConfig, steps_per_epoch: int) -> float:
    """Learning rate at global step ``step`` (schedules advance per iteration)."""
    if config.scheduler == "cosine":
        total = config.epochs * steps_per_epoch
        return cosine_lr(min(step, total), total, config.lr, config.lr_min)
    period = config.t0_epochs * steps_per_epoch
    t = step
    while t >= period:
        t -= period
        period *= config.t_mult
    return cosine_lr(t, period, config.lr, config.lr_min)


# -- evaluation -------------------------------------------------------------
def accuracy(predictions, labels) -> float:
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot compute accuracy of an empty set")
    return 100.0 * float((predictions == labels).mean())


def aggregate(accuracies: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation."""
    a = np.asarray(accuracies, dtype=np.float64)
    if a.size == 0:
        raise ValueError("no accuracies to aggregate")
    return float(a.mean()), float(a.std())


def predict_views(model, views: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Logits for (N, V, 3, H, W) views, averaged over V."""
    model.eval()
    n, v = views.shape[:2]
    flat = views.reshape((n * v,) + views.shape[2:])
    logits = []
    with no_grad():
        for i in range(0, len(flat), batch_size):
            logits.append(model(Tensor(flat[i:i + batch_size])).data)
    return np.concatenate(logits).reshape(n, v, -1).mean(axis=1)


def evaluate(model, views: np.ndarray, labels, batch_size: int = 64) -> float:
    if len(labels) == 0:
        raise ValueError("cannot evaluate on an empty set")
    return accuracy(predict_views(model, views, batch_size).argmax(axis=1), labels)


# -- training loop ----------------------------------------------------------
@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    train_loss: float
    test_acc: float


@dataclass
class TrainResult:
    model: object
    history: list[EpochMetrics]
    test_acc: float
    augment: AugmentConfig


def _views(manifest, indices, cfg: AugmentConfig, five: bool) -> np.ndarray:
    return np.stack([np.stack(eval_views(manifest.samples[i].pixels, cfg, five)) for i in indices])


def train(model, manifest: DatasetManifest, split: tuple[np.ndarray, np.ndarray],
          config: TrainConfig, augment: AugmentConfig | None = None, run_id: str = "run",
          metrics_path=None, eval_every: int = 1) -> TrainResult:
    """Train ``model`` on ``split[0]`` and report test accuracy on ``split[1]`` every epoch.

    Deterministic for a fixed ``config.seed``: the epoch order, flips and
    crops all come from streams seeded by (seed, epoch).
    """
    config.validate()
    augment = AugmentConfig() if augment is None else augment
    train_idx, test_idx = (np.asarray(s, dtype=np.int64) for s in split)
    if augment.mean is None or augment.std is None:
        mean, std = channel_stats(manifest, train_idx)
        augment = AugmentConfig(**{**augment.__dict__, "mean": mean, "std": std})
    labels = manifest.labels
    resized = {int(i): resize_short_side(manifest.samples[i].pixels, augment.resize)
               for i in train_idx}
    test_views = _views(manifest, test_idx, augment, config.five_crop_eval)
    params = model.trainable_parameters() if hasattr(model, "trainable_parameters") \
        else model.parameters()
    state = OptimizerState()
    n_batches = max(len(train_idx) // config.batch_size
                    + (len(train_idx) % config.batch_size > 1), 1)
    history = []
    step = 0
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        order = train_idx[rng.permutation(len(train_idx))]
        model.train()
        epoch_lr = lr_schedule(step, config, n_batches)
        losses = []
        for b in range(n_batches):
            batch = order[b * config.batch_size:(b + 1) * config.batch_size]
            if len(batch) < 2:
                continue
            xs, ys = [], []
            for i in batch:
                views = augment_train(resized[int(i)], augment, rng, resized=True)
                xs.extend(views)
                ys.extend([labels[i]] * len(views))
            lr = lr_schedule(step, config, n_batches)
            model.zero_grad()
            loss = F.cross_entropy(model(Tensor(np.stack(xs))), ys)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(b, value)
            loss.backward()
            sgd_step(params, state, lr, config.momentum, config.weight_decay)
            losses.append(value)
            step += 1
        last = epoch == config.epochs - 1
        test_acc = evaluate(model, test_views, labels[test_idx]) \
            if (last or (epoch + 1) % eval_every == 0) and len(test_idx) else float("nan")
        history.append(EpochMetrics(epoch, epoch_lr, float(np.mean(losses)), test_acc))
        log.info("%s epoch %d lr %.5f loss %.4f acc %.2f", run_id, epoch, epoch_lr,
                 history[-1].train_loss, test_acc)
        if metrics_path is not None:
            append_metrics(metrics_path, run_id, history[-1])
    return TrainResult(model, history, history[-1].test_acc, augment)


def append_metrics(path, run_id: str, m: EpochMetrics) -> None:
    path = Path(path)
    new = not path.exists()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(METRICS_HEADER)
        w.writerow([run_id, m.epoch, repr(m.lr), repr(m.train_loss), repr(m.test_acc)])
