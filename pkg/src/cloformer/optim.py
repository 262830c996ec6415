"""AdamW with decoupled weight decay and a warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .errors import ArgumentError, DimensionError


def cosine_lr(step: int, total: int, base_lr: float, warmup: int = 0) -> float:
    """Linear warmup to ``base_lr``, then half a cosine period down to zero at ``total``."""
    if total <= warmup:
        raise ArgumentError(f"total steps {total} must exceed warmup {warmup}")
    if not 0 <= step <= total:
        raise ArgumentError(f"step {step} outside [0, {total}]")
    if step < warmup:
        return base_lr * step / warmup
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * (step - warmup) / (total - warmup)))


@dataclass
class OptimState:
    base_lr: float = 1e-3
    weight_decay: float = 0.05
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    total_steps: Optional[int] = None  # None keeps the rate constant
    warmup: int = 0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def lr(self) -> float:
        """Rate for the update about to be taken (the schedule is read at step + 1)."""
        if self.total_steps is None:
            return self.base_lr
        return cosine_lr(min(self.step + 1, self.total_steps), self.total_steps, self.base_lr, self.warmup)


def adamw_step(params: Mapping, grads: Mapping, s: OptimState) -> OptimState:
    """Update ``params`` (name -> Tensor) in place from ``grads`` (name -> array or None).

    Missing or None gradients count as zero. Decay is applied first as
    ``p -= lr * wd * p``, then the bias-corrected Adam step.
    """
    lr = s.lr()
    b1, b2 = s.betas
    t = s.step + 1
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise DimensionError(f"{name}: gradient shape {g.shape} != parameter shape {p.data.shape}")
        m = s.m.get(name)
        if m is None:
            m = s.m[name] = np.zeros_like(p.data)
            s.v[name] = np.zeros_like(p.data)
        v = s.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if s.weight_decay:
            p.data *= p.data.dtype.type(1.0 - lr * s.weight_decay)
        if lr:
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + s.eps)).astype(p.data.dtype)
    s.step = t
    return s
