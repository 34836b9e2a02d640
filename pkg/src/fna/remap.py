"""Parameter remapping from a seed network onto architectures in its expanded space.

Depth is remapped first (stage by stage), then every resulting layer gets its
kernel-level and width-level remap in one pass.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .autodiff import BatchNormParams, Tensor
from .netgraph import (
    ArchitectureSpec,
    LayerChoice,
    ParamStore,
    head_shapes,
    init_head,
    layer_prefix,
    validate,
)

TRUNCATE_FIRST = "truncate_first"
RANKED_BN_GAMMA = "ranked_bn_gamma"
RANKED_STD = "ranked_std"
RANKED_L1 = "ranked_l1"
WIDTH_MODES = (TRUNCATE_FIRST, RANKED_BN_GAMMA, RANKED_STD, RANKED_L1)

CENTER_ZERO_PAD = "center_zero_pad"
DILATE = "dilate"
KERNEL_MODES = (CENTER_ZERO_PAD, DILATE)


class RemapError(ValueError):
    pass


class WidthExpansionUnsupported(RemapError):
    """Width remapping only narrows; a wider target has no source channels."""


@dataclass(frozen=True)
class RemapStrategy:
    width_mode: str = TRUNCATE_FIRST
    kernel_mode: str = CENTER_ZERO_PAD

    def __post_init__(self):
        if self.width_mode not in WIDTH_MODES:
            raise ValueError(f"unknown width mode {self.width_mode!r}; choose from {WIDTH_MODES}")
        if self.kernel_mode not in KERNEL_MODES:
            raise ValueError(f"unknown kernel mode {self.kernel_mode!r}; choose from {KERNEL_MODES}")

    @classmethod
    def named(cls, name: str) -> "RemapStrategy":
        try:
            return STRATEGIES[name]
        except KeyError:
            raise ValueError(f"unknown strategy {name!r}; choose from {sorted(STRATEGIES)}") from None


STRATEGIES = {
    "center": RemapStrategy(),
    "dilate": RemapStrategy(kernel_mode=DILATE),
    "bn": RemapStrategy(width_mode=RANKED_BN_GAMMA),
    "std": RemapStrategy(width_mode=RANKED_STD),
    "l1": RemapStrategy(width_mode=RANKED_L1),
}


def _arr(w) -> np.ndarray:
    return w.data if isinstance(w, Tensor) else np.asarray(w)


# -- depth ----------------------------------------------------------------

def remap_depth(seed_layers: list, target_depth: int) -> list:
    """Layer ``i`` of the result copies seed layer ``min(i, l)`` (1-based).

    Extra layers replicate the last seed layer; a shallower target keeps the
    first ``target_depth`` layers.
    """
    if not seed_layers:
        raise RemapError("cannot remap depth from an empty seed stage")
    if target_depth < 1:
        raise RemapError(f"target depth must be >= 1, got {target_depth}")
    last = len(seed_layers) - 1
    return [_deep_copy(seed_layers[min(i, last)]) for i in range(target_depth)]


def _deep_copy(layer):
    if isinstance(layer, (ParamStore, np.ndarray)):
        return layer.copy()
    return copy.deepcopy(layer)


# -- width ----------------------------------------------------------------

def remap_width(seed_weight, target_out: int, target_in: int) -> np.ndarray:
    """Keep the leading ``target_out`` x ``target_in`` channel block."""
    w = _arr(seed_weight)
    p, q = w.shape[0], w.shape[1]
    if target_out > p or target_in > q:
        raise WidthExpansionUnsupported(
            f"cannot widen [{p}, {q}] to [{target_out}, {target_in}]; only narrowing is defined")
    return w[:target_out, :target_in].copy()


def topk_indices(reference, q: int) -> np.ndarray:
    """Indices of the ``q`` largest entries, ascending; ties go to the lower index."""
    v = np.asarray(reference, dtype=np.float64)
    if q > v.shape[0]:
        raise WidthExpansionUnsupported(f"cannot select {q} of {v.shape[0]} channels")
    order = np.argsort(-v, kind="stable")[:q]
    return np.sort(order)


def remap_width_ranked(seed_weight, reference, q_out: int) -> tuple[np.ndarray, np.ndarray]:
    """Copy the ``q_out`` highest-reference channels (axis 0) in ascending index order.

    Returns the remapped weight and the selected indices, so the caller can
    apply the same selection to dependent tensors.
    """
    w = _arr(seed_weight)
    ref = np.asarray(reference)
    if ref.shape != (w.shape[0],):
        raise RemapError(f"reference has length {ref.shape}, weight has {w.shape[0]} channels")
    idx = topk_indices(ref, q_out)
    return w[idx].copy(), idx


def reference_bn_gamma(bn: BatchNormParams) -> np.ndarray:
    return np.abs(bn.gamma.data)


def reference_std(weight) -> np.ndarray:
    w = _arr(weight)
    return w.reshape(w.shape[0], -1).std(axis=1)


def reference_l1(weight) -> np.ndarray:
    w = _arr(weight)
    return np.abs(w.reshape(w.shape[0], -1)).sum(axis=1)


# -- kernel ---------------------------------------------------------------

def _check_kernel_args(w: np.ndarray, k: int) -> None:
    if k < 3 or k % 2 == 0:
        raise RemapError(f"target kernel must be odd and >= 3, got {k}")
    if w.shape[2:] != (3, 3):
        raise RemapError(f"kernel remap expects a 3x3 source kernel, got {w.shape[2:]}")


def remap_kernel_center(seed_weight, k: int) -> np.ndarray:
    """Embed the 3x3 kernel in the centre of a zero ``k x k`` kernel."""
    w = _arr(seed_weight)
    _check_kernel_args(w, k)
    out = np.zeros(w.shape[:2] + (k, k), dtype=w.dtype)
    o = (k - 3) // 2
    out[:, :, o:o + 3, o:o + 3] = w
    return out


def remap_kernel_dilate(seed_weight, k: int) -> np.ndarray:
    """Spread the 3x3 taps to rows/cols ``0, (k-1)/2, k-1`` of a zero kernel."""
    w = _arr(seed_weight)
    _check_kernel_args(w, k)
    out = np.zeros(w.shape[:2] + (k, k), dtype=w.dtype)
    step = (k - 1) // 2
    out[:, :, ::step, ::step] = w
    return out


def remap_kernel(seed_weight, k: int, mode: str = CENTER_ZERO_PAD) -> np.ndarray:
    w = _arr(seed_weight)
    if w.shape[2] == k:
        return w.copy()
    if mode == CENTER_ZERO_PAD:
        return remap_kernel_center(w, k)
    if mode == DILATE:
        return remap_kernel_dilate(w, k)
    raise ValueError(f"unknown kernel mode {mode!r}")


# -- layers and networks --------------------------------------------------

def _select_bn(bn: BatchNormParams, idx: np.ndarray) -> BatchNormParams:
    return BatchNormParams(
        gamma=Tensor(bn.gamma.data[idx].copy(), requires_grad=True),
        beta=Tensor(bn.beta.data[idx].copy(), requires_grad=True),
        running_mean=bn.running_mean[idx].copy(),
        running_var=bn.running_var[idx].copy(),
        eps=bn.eps,
        momentum=bn.momentum,
    )


def width_indices(layer: ParamStore, target_mid: int, mode: str) -> np.ndarray:
    """Channel indices of the expanded (hidden) dimension kept by the target."""
    seed_mid = layer["pw1.weight"].shape[0]
    if target_mid > seed_mid:
        raise WidthExpansionUnsupported(f"hidden width {target_mid} exceeds seed width {seed_mid}")
    if mode == TRUNCATE_FIRST:
        return np.arange(target_mid)
    if mode == RANKED_BN_GAMMA:
        ref = reference_bn_gamma(layer.bn["bn1"])
    elif mode == RANKED_STD:
        ref = reference_std(layer["pw1.weight"])
    elif mode == RANKED_L1:
        ref = reference_l1(layer["pw1.weight"])
    else:
        raise ValueError(f"unknown width mode {mode!r}")
    return topk_indices(ref, target_mid)


def remap_layer(layer: ParamStore, target: LayerChoice, cin: int, strategy: RemapStrategy) -> ParamStore:
    """Remap one MBConv layer's parameters (names relative to the layer) to ``target``."""
    if target.is_identity:
        return ParamStore()
    mid = target.expansion * cin
    if strategy.width_mode == TRUNCATE_FIRST:
        pw1 = remap_width(layer["pw1.weight"], mid, cin)
        idx = np.arange(mid)
    else:
        idx = width_indices(layer, mid, strategy.width_mode)
        pw1 = layer["pw1.weight"].data[idx].copy()
    dw = remap_kernel(layer["dw.weight"].data[idx], target.kernel, strategy.kernel_mode)
    pw2 = layer["pw2.weight"].data[:, idx].copy()
    return ParamStore(
        {"pw1.weight": Tensor(pw1, requires_grad=True),
         "dw.weight": Tensor(dw, requires_grad=True),
         "pw2.weight": Tensor(pw2, requires_grad=True)},
        {"bn1": _select_bn(layer.bn["bn1"], idx),
         "bn2": _select_bn(layer.bn["bn2"], idx),
         "bn3": layer.bn["bn3"].copy()},
    )


def stage_layers(spec: ArchitectureSpec, params: ParamStore, i: int) -> list[ParamStore]:
    """Per-layer parameter fragments of stage ``i`` (1-based), names relative to the layer."""
    out = []
    for j, choice in enumerate(spec.stages[i - 1].layers):
        if choice.is_identity:
            continue
        out.append(params.subset(layer_prefix(i, j), strip=True))
    return out


def remap_network(seed: tuple[ArchitectureSpec, ParamStore], target: ArchitectureSpec,
                  strategy: RemapStrategy = RemapStrategy(), rng: np.random.Generator | None = None
                  ) -> ParamStore:
    """Map seed parameters onto ``target``: depth first, then kernel and width per layer.

    The stem is copied. The head is copied when its shapes match and otherwise
    freshly initialized from ``rng``.
    """
    seed_spec, seed_params = seed
    if not seed_spec.same_space(target):
        raise RemapError("target is not in the seed's expanded space (stem, stage count, channels or strides differ)")
    out = ParamStore()
    out.update(seed_params.subset("stem."))
    out = out.copy()
    if head_shapes(seed_spec) == head_shapes(target):
        out.update(seed_params.subset("head.").copy())
    else:
        out.update(init_head(target, rng if rng is not None else np.random.default_rng(0)))
    for i, stage in enumerate(target.stages, 1):
        seed_layers = stage_layers(seed_spec, seed_params, i)
        deep = remap_depth(seed_layers, len(stage.layers))
        for j, (choice, src) in enumerate(zip(stage.layers, deep)):
            cin, _, _ = stage.layer_io(j)
            prefix = layer_prefix(i, j)
            try:
                out.update(remap_layer(src, choice, cin, strategy), prefix)
            except (RemapError, KeyError) as e:
                raise RemapError(f"{prefix.rstrip('.')}: {e}") from e
    validate(target, out)
    return out


def retarget_head(seed: tuple[ArchitectureSpec, ParamStore], task: str, rng: np.random.Generator
                  ) -> tuple[ArchitectureSpec, ParamStore]:
    """Seed network with its head swapped for ``task``; the backbone is copied as is.

    A head whose shapes already match is kept, otherwise it is initialized from ``rng``.
    """
    seed_spec, seed_params = seed
    spec = seed_spec.with_task(task)
    out = ParamStore({n: t for n, t in seed_params.items() if not n.startswith("head.")},
                     dict(seed_params.bn_items())).copy()
    if head_shapes(spec) == head_shapes(seed_spec):
        out.update(seed_params.subset("head.").copy())
    else:
        out.update(init_head(spec, rng))
    validate(spec, out)
    return spec, out
