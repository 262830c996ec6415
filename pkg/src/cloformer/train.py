"""Mini-batch training and evaluation on an in-memory dataset."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ArgumentError, NumericError
from .loss import softmax_cross_entropy
from .model import Model, model_forward
from .optim import OptimState, adamw_step
from .tensor import Tensor, no_grad


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.05
    warmup_frac: float = 0.05
    seed: int = 0
    target_acc: Optional[float] = None  # stop once full-set accuracy reaches this


def evaluate(m: Model, images: np.ndarray, labels: np.ndarray, batch_size: int = 64) -> tuple[float, float]:
    """(mean loss, accuracy) in inference mode."""
    total_loss = 0.0
    correct = 0
    with no_grad():
        for i in range(0, len(labels), batch_size):
            x = Tensor(images[i:i + batch_size], dtype=m.dtype)
            y = labels[i:i + batch_size]
            logits = model_forward(x, m)
            total_loss += softmax_cross_entropy(logits, y).item() * len(y)
            correct += int((logits.data.argmax(axis=1) == y).sum())
    return total_loss / len(labels), correct / len(labels)


def train_loop(m: Model, ds, cfg: TrainConfig = TrainConfig(),
               log: Optional[Callable[[dict], None]] = None) -> list[dict]:
    """Train ``m`` in place; returns one metrics record per epoch.

    Each record holds the epoch, the step count reached, the mean training
    loss and running accuracy over the epoch's batches, and the full-set
    accuracy in inference mode.
    """
    if ds.num_classes != m.spec.num_classes:
        raise ArgumentError(f"dataset has {ds.num_classes} classes, model predicts {m.spec.num_classes}")
    if cfg.steps < 1 or cfg.batch_size < 1:
        raise ArgumentError("steps and batch_size must be positive")
    rng = np.random.default_rng(cfg.seed)
    warmup = int(cfg.warmup_frac * cfg.steps)
    state = OptimState(cfg.lr, cfg.weight_decay, total_steps=cfg.steps, warmup=warmup)
    params = m.parameters()
    images = ds.images.astype(m.dtype, copy=False)
    n = len(ds)
    per_epoch = max(1, math.ceil(n / cfg.batch_size))
    history = []
    step = 0
    epoch = 0
    while step < cfg.steps:
        order = rng.permutation(n)
        losses, correct, seen = [], 0, 0
        for b in range(per_epoch):
            if step >= cfg.steps:
                break
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            y = ds.labels[idx]
            try:
                logits = model_forward(Tensor(images[idx]), m, rng=rng, training=True)
            except NumericError as e:
                raise NumericError(f"step {step}: {e}") from None
            loss = softmax_cross_entropy(logits, y)
            if not np.isfinite(loss.data):
                raise NumericError(f"step {step}: loss is {loss.item()}")
            m.zero_grad()
            loss.backward()
            adamw_step(params, {k: p.grad for k, p in params.items()}, state)
            step += 1
            losses.append(loss.item())
            correct += int((logits.data.argmax(axis=1) == y).sum())
            seen += len(y)
        epoch += 1
        _, full_acc = evaluate(m, images, ds.labels)
        rec = {"epoch": epoch, "step": step, "loss": float(np.mean(losses)),
               "batch_acc": correct / seen, "train_acc": full_acc}
        history.append(rec)
        if log is not None:
            log(rec)
        if cfg.target_acc is not None and full_acc >= cfg.target_acc:
            break
    return history
