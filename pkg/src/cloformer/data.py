"""Synthetic image classification data: coloured shapes on a noisy background."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError

SHAPES = ("disc", "square", "triangle", "cross")
COLORS = np.array([[0.9, 0.15, 0.15], [0.15, 0.8, 0.2], [0.2, 0.3, 0.95], [0.95, 0.85, 0.1]])
MAX_CLASSES = len(SHAPES) * len(COLORS)


@dataclass
class SynthDataset:
    images: np.ndarray  # (N, 3, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    num_classes: int
    seed: int

    def __len__(self) -> int:
        return len(self.labels)


def class_recipe(c: int) -> tuple[int, int]:
    """(shape index, colour index) of class ``c``.

    Consecutive classes differ in both shape and colour, so small class
    counts still need both cues.
    """
    n = len(COLORS)
    return c % len(SHAPES), (c // len(SHAPES) + c) % n


def _mask(shape: int, yy, xx, cy, cx, r):
    dy, dx = yy - cy, xx - cx
    if shape == 0:
        return dy * dy + dx * dx <= r * r
    if shape == 1:
        return (np.abs(dy) <= r * 0.85) & (np.abs(dx) <= r * 0.85)
    if shape == 2:
        return (dy <= r * 0.7) & (dy >= -r) & (np.abs(dx) <= (dy + r) * 0.6)
    arm = r * 0.3
    return ((np.abs(dy) <= arm) & (np.abs(dx) <= r)) | ((np.abs(dx) <= arm) & (np.abs(dy) <= r))


def gen_synth_dataset(n: int, classes: int, hw: int = 64, seed: int = 0) -> SynthDataset:
    if classes < 2:
        raise ArgumentError(f"need at least 2 classes, got {classes}")
    if classes > MAX_CLASSES:
        raise ArgumentError(f"{classes} classes exceed the {MAX_CLASSES} shape/colour combinations")
    if hw < 32 or hw % 32:
        raise ArgumentError(f"image size must be a positive multiple of 32, got {hw}")
    if n < 1:
        raise ArgumentError(f"need at least one sample, got {n}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes).astype(np.int64)
    yy, xx = np.mgrid[0:hw, 0:hw].astype(np.float32)
    images = np.empty((n, 3, hw, hw), np.float32)
    for i, c in enumerate(labels):
        shape, color = class_recipe(int(c))
        r = hw * rng.uniform(0.16, 0.28)
        cy, cx = rng.uniform(r, hw - r, size=2)
        m = _mask(shape, yy, xx, cy, cx, r)
        rgb = np.clip(COLORS[color] + rng.normal(0, 0.05, 3), 0, 1)
        bg = rng.uniform(0.0, 0.35) + rng.normal(0, 0.04, (3, hw, hw))
        img = np.where(m, rgb[:, None, None], bg)
        images[i] = np.clip(img, 0.0, 1.0)
    return SynthDataset(images, labels, classes, seed)
