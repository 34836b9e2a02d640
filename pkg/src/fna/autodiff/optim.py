"""SGD-with-momentum and Adam, updating ``Tensor.data`` in place.

Parameters whose ``grad`` is ``None`` are skipped entirely (no decay, no
momentum update), so tensors untouched by a step stay bit-identical.
"""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from .tensor import Tensor


class Optimizer:
    def __init__(self, params: Iterable[Tensor], lr: float):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.state: dict[int, dict[str, np.ndarray]] = {}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def set_lr(self, lr: float) -> None:
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr = lr


class SGD(Optimizer):
    """``v = momentum * v + (g + wd * p);  p -= lr * v``."""

    def __init__(self, params, lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        super().__init__(params, lr)
        self.momentum = momentum
        self.weight_decay = weight_decay

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            if self.momentum:
                st = self.state.setdefault(id(p), {})
                v = st.get("velocity")
                if v is None:
                    v = np.zeros_like(p.data)
                v = self.momentum * v + g
                st["velocity"] = v
                g = v
            p.data -= (self.lr * g).astype(p.data.dtype, copy=False)


class Adam(Optimizer):
    """Adam with L2-style weight decay folded into the gradient."""

    def __init__(self, params, lr: float = 1e-3, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        super().__init__(params, lr)
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps

    def step(self) -> None:
        b1, b2 = self.betas
        for p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            st = self.state.setdefault(id(p), {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "t": 0})
            st["t"] += 1
            st["m"] = b1 * st["m"] + (1 - b1) * g
            st["v"] = b2 * st["v"] + (1 - b2) * g * g
            mhat = st["m"] / (1 - b1 ** st["t"])
            vhat = st["v"] / (1 - b2 ** st["t"])
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype, copy=False)


def sgd_step(params, grads, lr: float, momentum: float = 0.0, weight_decay: float = 0.0,
             state: dict | None = None) -> None:
    """Functional SGD step; ``state`` carries velocities between calls."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    state = {} if state is None else state
    for i, (p, g) in enumerate(zip(params, grads)):
        if weight_decay:
            g = g + weight_decay * p
        if momentum:
            v = momentum * state.get(i, np.zeros_like(p)) + g
            state[i] = v
            g = v
        p -= lr * g


def adam_step(params, grads, lr: float, weight_decay: float = 0.0, betas=(0.9, 0.999), eps: float = 1e-8,
              state: dict | None = None) -> None:
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    state = {} if state is None else state
    b1, b2 = betas
    for i, (p, g) in enumerate(zip(params, grads)):
        if weight_decay:
            g = g + weight_decay * p
        m, v, t = state.get(i, (np.zeros_like(p), np.zeros_like(p), 0))
        t += 1
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state[i] = (m, v, t)
        p -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)


def warmup_cosine(step: int, total: int, peak: float, warmup: int, start: float = 1e-4, floor: float = 0.0) -> float:
    """Linear warmup from ``start`` to ``peak``, then cosine decay to ``floor``."""
    if step < warmup:
        return start + (peak - start) * step / max(warmup, 1)
    t = (step - warmup) / max(total - warmup, 1)
    return floor + 0.5 * (peak - floor) * (1 + math.cos(math.pi * min(t, 1.0)))
