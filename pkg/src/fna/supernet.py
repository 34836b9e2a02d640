"""Super network: every searchable layer holds all candidate ops plus logits over them."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tensor
from .autodiff import functional as F
from .netgraph import (
    IDENTITY,
    INPUT_HW,
    MB,
    ArchitectureSpec,
    HeadSpec,
    LayerChoice,
    CLASSIFICATION,
    SEGMENTATION,
    ParamStore,
    default_stages,
    head_forward,
    head_madds,
    head_shapes,
    init_tensors,
    layer_prefix,
    madds_of_layer,
    mbconv_forward,
    mbconv_shapes,
    stage_input_hw,
    stem_forward,
    stem_madds,
)
from .remap import RemapStrategy, remap_depth, remap_layer, stage_layers

DEFAULT_OPSET: tuple[LayerChoice, ...] = (
    MB(3, 3), MB(3, 6), MB(5, 3), MB(5, 6), MB(7, 3), MB(7, 6), IDENTITY,
)


def opset_for(j: int, opset: tuple[LayerChoice, ...] = DEFAULT_OPSET) -> tuple[LayerChoice, ...]:
    """Candidates of layer ``j`` in a stage; the first layer never offers identity."""
    if len(set(opset)) != len(opset) or not opset:
        raise ValueError("op set must be nonempty without duplicates")
    return tuple(c for c in opset if not c.is_identity) if j == 0 else tuple(opset)


@dataclass
class MixedLayer:
    choices: tuple[LayerChoice, ...]
    candidates: list[ParamStore]       # one per choice, names relative to the candidate
    alpha: Tensor
    cin: int
    cout: int
    stride: int

    def probs(self) -> np.ndarray:
        a = self.alpha.data.astype(np.float64)
        e = np.exp(a - a.max())
        return e / e.sum()


@dataclass
class SuperNet:
    base: ArchitectureSpec                     # skeleton; layer lists are the seed's
    shared: ParamStore                         # stem and head
    stages: list[list[MixedLayer]] = field(default_factory=list)

    def mixed_layers(self):
        for i, stage in enumerate(self.stages, 1):
            for j, layer in enumerate(stage):
                yield i, j, layer

    def alphas(self) -> list[Tensor]:
        return [layer.alpha for _, _, layer in self.mixed_layers()]

    def weights(self) -> list[Tensor]:
        out = self.shared.trainable()
        for _, _, layer in self.mixed_layers():
            for cand in layer.candidates:
                out += cand.trainable()
        return out

    @property
    def max_layers(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.stages)

    # -- serialization ---------------------------------------------------
    def to_flat(self) -> dict[str, np.ndarray]:
        out = dict(self.shared.flat())
        for i, j, layer in self.mixed_layers():
            p = layer_prefix(i, j)
            out[p + "alpha"] = layer.alpha.data
            for c, cand in enumerate(layer.candidates):
                for k, v in cand.flat().items():
                    out[f"{p}cand{c}.{k}"] = v
        return dict(sorted(out.items()))

    @classmethod
    def from_flat(cls, arrays: dict[str, np.ndarray], opset: tuple[LayerChoice, ...] = DEFAULT_OPSET) -> "SuperNet":
        layer_re = re.compile(r"stage(\d+)\.layer(\d+)\.(.*)")
        shared, per_layer = {}, {}
        for name, arr in arrays.items():
            m = layer_re.fullmatch(name)
            if m:
                per_layer.setdefault((int(m.group(1)), int(m.group(2))), {})[m.group(3)] = arr
            else:
                shared[name] = arr
        shared_store = ParamStore.from_flat(shared)
        task = CLASSIFICATION if "head.fc.weight" in shared_store.tensors else SEGMENTATION
        n_classes = shared_store[("head.fc.weight" if task == CLASSIFICATION else "head.conv.weight")].shape[0]
        depth: dict[int, int] = {}
        for i, j in per_layer:
            depth[i] = max(depth.get(i, 0), j + 1)
        skeleton = default_stages()
        if len(depth) != len(skeleton):
            raise ValueError(f"super network has {len(depth)} stages, expected {len(skeleton)}")
        stages_spec = tuple(replace(st, max_layers=depth[i + 1]) for i, st in enumerate(skeleton))
        base = ArchitectureSpec(stages_spec, HeadSpec(task, n_classes))
        net = cls(base=base, shared=shared_store)
        for i, st in enumerate(base.stages, 1):
            row = []
            for j in range(depth[i]):
                entries = per_layer[(i, j)]
                alpha = entries.pop("alpha")
                choices = opset_for(j, opset)
                if alpha.shape != (len(choices),):
                    raise ValueError(f"stage{i}.layer{j}: alpha has shape {alpha.shape}, expected {len(choices)}")
                cands: dict[int, dict[str, np.ndarray]] = {c: {} for c in range(len(choices))}
                for k, v in entries.items():
                    cm = re.fullmatch(r"cand(\d+)\.(.*)", k)
                    if not cm:
                        raise ValueError(f"unexpected super-network entry stage{i}.layer{j}.{k}")
                    cands[int(cm.group(1))][cm.group(2)] = v
                cin, cout, stride = st.layer_io(j)
                row.append(MixedLayer(choices, [ParamStore.from_flat(cands[c]) for c in range(len(choices))],
                                      Tensor(alpha, requires_grad=True), cin, cout, stride))
            net.stages.append(row)
        return net


def expand_seed(seed: tuple[ArchitectureSpec, ParamStore], max_layers: tuple[int, ...] | None = None,
                opset: tuple[LayerChoice, ...] = DEFAULT_OPSET,
                strategy: RemapStrategy = RemapStrategy()) -> SuperNet:
    """Build the super network with every candidate remapped from the seed."""
    seed_spec, seed_params = seed
    max_layers = max_layers or tuple(st.max_layers for st in seed_spec.stages)
    base = _base_with_max(seed_spec, max_layers)
    net = SuperNet(base=base, shared=seed_params.subset("stem.").copy())
    net.shared.update(seed_params.subset("head.").copy())
    for i, (st, mx) in enumerate(zip(seed_spec.stages, max_layers), 1):
        if mx < len(st.layers):
            raise ValueError(f"stage{i}: max_layers {mx} below seed depth {len(st.layers)}")
        deep = remap_depth(stage_layers(seed_spec, seed_params, i), mx)
        row = []
        for j in range(mx):
            cin, cout, stride = st.layer_io(j)
            choices = opset_for(j, opset)
            cands = [remap_layer(deep[j], c, cin, strategy) for c in choices]
            row.append(MixedLayer(choices, cands, Tensor(np.zeros(len(choices), np.float32), requires_grad=True),
                                  cin, cout, stride))
        net.stages.append(row)
    return net


def random_supernet(spec: ArchitectureSpec, rng: np.random.Generator,
                    max_layers: tuple[int, ...] | None = None,
                    opset: tuple[LayerChoice, ...] = DEFAULT_OPSET) -> SuperNet:
    """Super network with He-initialized candidates (no seed parameters)."""
    max_layers = max_layers or tuple(st.max_layers for st in spec.stages)
    base = _base_with_max(spec, max_layers)
    stem = base.stem
    shared = init_tensors(
        {"stem.conv.weight": (stem.out_channels, stem.in_channels, stem.kernel, stem.kernel), **head_shapes(base)},
        {"stem.bn": stem.out_channels}, rng)
    net = SuperNet(base=base, shared=shared)
    for i, (st, mx) in enumerate(zip(base.stages, max_layers), 1):
        row = []
        for j in range(mx):
            cin, cout, stride = st.layer_io(j)
            choices = opset_for(j, opset)
            cands = [init_tensors(*mbconv_shapes(c, cin, cout), rng) for c in choices]
            row.append(MixedLayer(choices, cands, Tensor(np.zeros(len(choices), np.float32), requires_grad=True),
                                  cin, cout, stride))
        net.stages.append(row)
    return net


def _base_with_max(spec: ArchitectureSpec, max_layers) -> ArchitectureSpec:
    # layer lists are truncated so a smaller max stays a valid stage
    return replace(spec, stages=tuple(replace(st, max_layers=mx, layers=st.layers[:mx])
                                      for st, mx in zip(spec.stages, max_layers)))


# -- forward ------------------------------------------------------------

def candidate_forward(layer: MixedLayer, c: int, x: Tensor, training: bool, update_stats: bool = True) -> Tensor:
    return mbconv_forward(x, layer.candidates[c], "", layer.choices[c], layer.cin, layer.cout, layer.stride,
                          training, update_stats)


def mixed_forward(layer: MixedLayer, x: Tensor, training: bool = True, update_stats: bool = True) -> Tensor:
    """Softmax(alpha)-weighted sum of every candidate's output."""
    w = F.softmax(layer.alpha, axis=0)
    out = None
    for c in range(len(layer.choices)):
        term = F.getitem(w, c) * candidate_forward(layer, c, x, training, update_stats)
        out = term if out is None else out + term
    return out


def forward_supernet(net: SuperNet, x: Tensor, training: bool = True, update_stats: bool = True) -> Tensor:
    h = stem_forward(net.base, net.shared, x, training, update_stats)
    for _, _, layer in net.mixed_layers():
        h = mixed_forward(layer, h, training, update_stats)
    return head_forward(net.base, net.shared, h, x.shape[2:])


def forward_path(net: SuperNet, path: list[list[int]], x: Tensor, training: bool = True,
                 update_stats: bool = True) -> Tensor:
    """Forward a single sampled path (one candidate index per mixed layer)."""
    h = stem_forward(net.base, net.shared, x, training, update_stats)
    for i, j, layer in net.mixed_layers():
        h = candidate_forward(layer, path[i - 1][j], h, training, update_stats)
    return head_forward(net.base, net.shared, h, x.shape[2:])


def path_params(net: SuperNet, path: list[list[int]]) -> list[Tensor]:
    out = net.shared.trainable()
    for i, j, layer in net.mixed_layers():
        out += layer.candidates[path[i - 1][j]].trainable()
    return out


# -- sampling and derivation ---------------------------------------------

def _spec_from_path(net: SuperNet, path: list[list[int]]) -> ArchitectureSpec:
    layers = []
    for i, stage in enumerate(net.stages, 1):
        layers.append([stage[j].choices[path[i - 1][j]] for j in range(len(stage))])
    return net.base.with_layers(layers).without_identity()


def sample_path(net: SuperNet, rng: np.random.Generator) -> tuple[ArchitectureSpec, list[list[int]]]:
    """Draw one candidate per layer from softmax(alpha); identity picks drop the layer."""
    path = []
    for stage in net.stages:
        row = []
        for layer in stage:
            cdf = np.cumsum(layer.probs())
            u = rng.random() * cdf[-1]
            row.append(int(min(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)))
        path.append(row)
    return _spec_from_path(net, path), path


def uniform_path(net: SuperNet, rng: np.random.Generator) -> tuple[ArchitectureSpec, list[list[int]]]:
    path = [[int(rng.integers(len(layer.choices))) for layer in stage] for stage in net.stages]
    return _spec_from_path(net, path), path


def argmax_path(net: SuperNet) -> list[list[int]]:
    # np.argmax returns the first maximal index: ties go to the earliest candidate
    return [[int(np.argmax(layer.alpha.data)) for layer in stage] for stage in net.stages]


def derive_architecture(net: SuperNet) -> ArchitectureSpec:
    return _spec_from_path(net, argmax_path(net))


# -- expected cost --------------------------------------------------------

def layer_madds_table(net: SuperNet, input_hw: tuple[int, int] = (INPUT_HW, INPUT_HW)) -> list[list[np.ndarray]]:
    """MAdds of every candidate of every mixed layer, at that layer's resolution."""
    hws = stage_input_hw(net.base, input_hw)
    table = []
    for stage, hw in zip(net.stages, hws):
        row = []
        for j, layer in enumerate(stage):
            h, w = hw if j == 0 else ((hw[0] - 1) // stage[0].stride + 1, (hw[1] - 1) // stage[0].stride + 1)
            row.append(np.array([madds_of_layer(c, layer.cin, layer.cout, h, w, layer.stride)
                                 for c in layer.choices], dtype=np.float64))
        table.append(row)
    return table


def fixed_madds(net: SuperNet, input_hw: tuple[int, int] = (INPUT_HW, INPUT_HW)) -> int:
    hws = stage_input_hw(net.base, input_hw)
    return stem_madds(net.base, input_hw) + head_madds(net.base, hws[-1])


def expected_madds(net: SuperNet, input_hw: tuple[int, int] = (INPUT_HW, INPUT_HW), scale: float = 1.0) -> Tensor:
    """Softmax-expected MAdds of the super network (differentiable in alpha), divided by ``scale``."""
    table = layer_madds_table(net, input_hw)
    total = Tensor(np.array(fixed_madds(net, input_hw) / scale, dtype=np.float64), dtype=np.float64)
    for (i, j, layer) in net.mixed_layers():
        costs = Tensor(table[i - 1][j] / scale, dtype=np.float64)
        p = F.softmax(F.cast(layer.alpha, np.float64), axis=0)
        total = total + F.sum(p * costs)
    return total


__all__ = [
    "DEFAULT_OPSET",
    "MixedLayer",
    "SuperNet",
    "argmax_path",
    "candidate_forward",
    "derive_architecture",
    "expand_seed",
    "expected_madds",
    "fixed_madds",
    "forward_path",
    "forward_supernet",
    "layer_madds_table",
    "mixed_forward",
    "opset_for",
    "path_params",
    "random_supernet",
    "sample_path",
    "uniform_path",
]
