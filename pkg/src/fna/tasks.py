"""Procedural 32x32 shape images for the seed task and the target task.

Both tasks draw from the same renderer (squares, crosses, discs on a noisy
background), so features learned for classification transfer to dense
prediction. Class ids: 0 = square, 1 = cross, 2 = disc for classification;
segmentation masks use 0 for background and ``shape + 1`` for shapes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .netgraph import CLASSIFICATION, INPUT_HW, SEGMENTATION

SHAPES = ("square", "cross", "disc")


@dataclass(frozen=True)
class DatasetSpec:
    size: int
    rng_seed: int = 0
    noise_sigma: float = 0.1
    min_radius: int = 4
    max_radius: int = 8
    max_shapes: int = 2  # segmentation only
    hw: int = INPUT_HW


@dataclass
class Dataset:
    task: str
    images: np.ndarray                 # [N, 1, H, W] float32 in [0, 1]
    targets: np.ndarray                # [N] or [N, H, W] int64

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def num_classes(self) -> int:
        return len(SHAPES) if self.task == CLASSIFICATION else len(SHAPES) + 1

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.task, self.images[idx], self.targets[idx])

    def batches(self, batch_size: int, rng: np.random.Generator | None = None,
                drop_last: bool = True) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        n = len(self)
        order = rng.permutation(n) if rng is not None else np.arange(n)
        stop = n - n % batch_size if drop_last and n >= batch_size else n
        for s in range(0, stop, batch_size):
            idx = order[s:s + batch_size]
            yield self.images[idx], self.targets[idx]

    def sample_batch(self, batch_size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        idx = rng.choice(len(self), size=min(batch_size, len(self)), replace=False)
        return self.images[idx], self.targets[idx]


def shape_mask(kind: int, cy: int, cx: int, radius: int, hw: int = INPUT_HW) -> np.ndarray:
    """Boolean pixel mask of one shape centred at (cy, cx)."""
    yy, xx = np.mgrid[0:hw, 0:hw]
    dy, dx = np.abs(yy - cy), np.abs(xx - cx)
    if kind == 0:
        return (dy <= radius) & (dx <= radius)
    if kind == 1:
        t = max(1, radius // 3)
        return ((dy <= radius) & (dx <= t)) | ((dx <= radius) & (dy <= t))
    if kind == 2:
        return dy * dy + dx * dx <= radius * radius
    raise ValueError(f"unknown shape kind {kind}")


def _draw(rng: np.random.Generator, spec: DatasetSpec, kind: int) -> tuple[np.ndarray, float]:
    r = int(rng.integers(spec.min_radius, spec.max_radius + 1))
    lo, hi = r, spec.hw - 1 - r
    cy, cx = int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1))
    return shape_mask(kind, cy, cx, r, spec.hw), float(rng.uniform(0.6, 1.0))


def _finish(rng: np.random.Generator, spec: DatasetSpec, img: np.ndarray) -> np.ndarray:
    if spec.noise_sigma > 0:
        img = img + rng.normal(0.0, spec.noise_sigma, img.shape)
    return np.clip(img, 0.0, 1.0)


def gen_classification_set(spec: DatasetSpec) -> Dataset:
    """One shape per image; labels are drawn stratified (balanced up to one)."""
    if spec.size < 1:
        raise ValueError("dataset size must be >= 1")
    rng = np.random.default_rng(spec.rng_seed)
    labels = rng.permutation(np.arange(spec.size) % len(SHAPES))
    images = np.empty((spec.size, 1, spec.hw, spec.hw), dtype=np.float32)
    for n, kind in enumerate(labels):
        bg = rng.uniform(0.0, 0.3)
        mask, fg = _draw(rng, spec, int(kind))
        img = np.where(mask, fg, bg)
        images[n, 0] = _finish(rng, spec, img)
    return Dataset(CLASSIFICATION, images, labels.astype(np.int64))


def gen_segmentation_set(spec: DatasetSpec) -> Dataset:
    """One to ``max_shapes`` shapes per image; later shapes paint over earlier ones."""
    if spec.size < 1:
        raise ValueError("dataset size must be >= 1")
    rng = np.random.default_rng(spec.rng_seed)
    images = np.empty((spec.size, 1, spec.hw, spec.hw), dtype=np.float32)
    masks = np.zeros((spec.size, spec.hw, spec.hw), dtype=np.int64)
    for n in range(spec.size):
        img = np.full((spec.hw, spec.hw), rng.uniform(0.0, 0.3))
        for _ in range(int(rng.integers(1, spec.max_shapes + 1))):
            kind = int(rng.integers(len(SHAPES)))
            mask, fg = _draw(rng, spec, kind)
            img[mask] = fg
            masks[n][mask] = kind + 1
        images[n, 0] = _finish(rng, spec, img)
    return Dataset(SEGMENTATION, images, masks)


def gen_dataset(task: str, spec: DatasetSpec) -> Dataset:
    if task == CLASSIFICATION:
        return gen_classification_set(spec)
    if task == SEGMENTATION:
        return gen_segmentation_set(spec)
    raise ValueError(f"unknown task {task!r}")


# -- metrics --------------------------------------------------------------

def accuracy(logits, labels) -> float:
    logits = np.asarray(getattr(logits, "data", logits))
    labels = np.asarray(labels)
    if logits.shape[0] != labels.shape[0]:
        raise ValueError("logits and labels disagree on batch size")
    return float(np.mean(logits.argmax(axis=1) == labels))


def confusion_matrix(pred, true, num_classes: int) -> np.ndarray:
    pred = np.asarray(pred).reshape(-1)
    true = np.asarray(true).reshape(-1)
    return np.bincount(true * num_classes + pred, minlength=num_classes * num_classes).reshape(
        num_classes, num_classes)


def miou_from_confusion(cm: np.ndarray) -> float:
    inter = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    present = union > 0
    if not present.any():
        return 1.0
    return float(np.mean(inter[present] / union[present]))


def miou(pred_masks, true_masks, num_classes: int) -> float:
    """Mean IoU over classes present in the prediction or the truth."""
    if num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    pred_masks, true_masks = np.asarray(pred_masks), np.asarray(true_masks)
    if pred_masks.shape != true_masks.shape:
        raise ValueError(f"mask shapes differ: {pred_masks.shape} vs {true_masks.shape}")
    return miou_from_confusion(confusion_matrix(pred_masks, true_masks, num_classes))
