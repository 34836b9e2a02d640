"""Shared SGD loops, evaluation and BN recalibration for concrete networks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import SGD, Tensor, backward, no_grad
from .autodiff import functional as F
from .autodiff.optim import warmup_cosine
from .netgraph import CLASSIFICATION, ArchitectureSpec, ParamStore, forward_network, validate
from .tasks import Dataset, accuracy, confusion_matrix, miou_from_confusion


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, value: float):
        super().__init__(f"loss became non-finite ({value}) at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    steps: int = 2000
    lr: float = 0.02
    lr_start: float = 1e-4
    warmup_steps: int = 100
    lr_floor: float = 1e-5
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 8


def train(spec: ArchitectureSpec, params: ParamStore, data: Dataset, cfg: TrainConfig,
          rng: np.random.Generator, on_step: Callable[[int, float], bool | None] | None = None) -> list[float]:
    """SGD with linear warmup + cosine decay; returns the per-step training loss.

    ``on_step(step, loss)`` may return True to stop early.
    """
    validate(spec, params)
    opt = SGD(params.trainable(), lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    losses: list[float] = []
    for step in range(cfg.steps):
        opt.set_lr(warmup_cosine(step, cfg.steps, cfg.lr, cfg.warmup_steps, cfg.lr_start, cfg.lr_floor))
        x, y = data.sample_batch(cfg.batch_size, rng)
        opt.zero_grad()
        out = forward_network(spec, params, Tensor(x), training=True, check=False)
        loss = F.cross_entropy(out, y)
        value = float(loss.data)
        if not math.isfinite(value):
            raise DivergenceError(step, value)
        backward(loss)
        opt.step()
        losses.append(value)
        if on_step is not None and on_step(step, value):
            break
    return losses


def predict(spec: ArchitectureSpec, params: ParamStore, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Eval-mode logits for a stack of images."""
    outs = []
    with no_grad():
        for s in range(0, images.shape[0], batch_size):
            outs.append(forward_network(spec, params, Tensor(images[s:s + batch_size]), training=False).data)
    return np.concatenate(outs, axis=0)


def evaluate(spec: ArchitectureSpec, params: ParamStore, data: Dataset, batch_size: int = 64) -> float:
    """Accuracy (classification) or mIOU (segmentation) in eval mode."""
    if data.task == CLASSIFICATION:
        return accuracy(predict(spec, params, data.images, batch_size), data.targets)
    cm = np.zeros((data.num_classes, data.num_classes), dtype=np.int64)
    for s in range(0, len(data), batch_size):
        logits = predict(spec, params, data.images[s:s + batch_size], batch_size)
        cm += confusion_matrix(logits.argmax(axis=1), data.targets[s:s + batch_size], data.num_classes)
    return miou_from_confusion(cm)


def eval_loss(spec: ArchitectureSpec, params: ParamStore, data: Dataset, batch_size: int = 64) -> float:
    total, n = 0.0, 0
    with no_grad():
        for s in range(0, len(data), batch_size):
            x, y = data.images[s:s + batch_size], data.targets[s:s + batch_size]
            out = forward_network(spec, params, Tensor(x), training=False)
            total += float(F.cross_entropy(out, y).data) * x.shape[0]
            n += x.shape[0]
    return total / n


def bn_recalibrate(spec: ArchitectureSpec, params: ParamStore, data: Dataset, steps: int,
                   batch_size: int = 16, rng: np.random.Generator | None = None,
                   on_step: Callable[[int, ParamStore], None] | None = None) -> ParamStore:
    """Refresh BN running statistics with training-mode forwards; nothing else changes."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    out = params.copy()
    rng = rng if rng is not None else np.random.default_rng(0)
    with no_grad():
        for step in range(steps):
            x, _ = data.sample_batch(batch_size, rng)
            forward_network(spec, out, Tensor(x), training=True)
            if on_step is not None:
                on_step(step, out)
    return out


def smooth(values, window: int = 50) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)."""
    v = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)
