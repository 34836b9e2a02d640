"""Central finite-difference gradient checks against the tape's analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numeric_grad(fn: Callable[[], Tensor], x: Tensor, eps: float = 1e-6) -> np.ndarray:
    """d fn() / d x by central differences in float64, perturbing ``x.data`` in place."""
    g = np.zeros(x.shape, dtype=np.float64)
    flat = x.data.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(fn().data)
        flat[i] = orig - eps
        lo = float(fn().data)
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * eps)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||a||, ||b||)``; 0 when both vanish."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-6,
                    reference: Callable[[], Tensor] | None = None,
                    reference_inputs: Sequence[Tensor] | None = None) -> list[float]:
    """Relative error of each input's analytic gradient against finite differences.

    By default the numeric gradient is taken on ``fn`` itself. For the float32
    audit pass a float64 ``reference`` closure over ``reference_inputs`` (same
    values, float64 storage) so the finite differences are not swamped by
    float32 rounding.
    """
    for x in inputs:
        x.grad = None
    backward(fn())
    ref_fn = reference or fn
    ref_inputs = reference_inputs or inputs
    errors = []
    for x, rx in zip(inputs, ref_inputs):
        if x.grad is None:
            raise ValueError("an input received no gradient; is it part of the graph?")
        errors.append(relative_error(x.grad, numeric_grad(ref_fn, rx, eps)))
    return errors
