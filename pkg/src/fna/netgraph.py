"""Architecture descriptions, MBConv networks, parameter stores and MAdds.

Parameters live in a flat :class:`ParamStore` addressed by dotted names::

    stem.conv.weight, stem.bn
    stage{i}.layer{j}.pw1.weight / .dw.weight / .pw2.weight
    stage{i}.layer{j}.bn1 / .bn2 / .bn3
    head.fc.weight, head.fc.bias          (classification)
    head.conv.weight, head.conv.bias      (segmentation)

Stages are numbered from 1, layers within a stage from 0.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from .autodiff import BatchNormParams, Tensor
from .autodiff import functional as F

KERNELS = (3, 5, 7)
EXPANSIONS = (3, 6)

INPUT_HW = 32
INPUT_CHANNELS = 1
STEM_CHANNELS = 16
STAGE_CHANNELS = (16, 24, 32, 64)
STAGE_STRIDES = (1, 2, 1, 1)
SEED_DEPTHS = (2, 2, 3, 2)
MAX_LAYERS = (3, 3, 4, 3)
SEED_KERNEL = 3
SEED_EXPANSION = 6

CLASSIFICATION = "classification"
SEGMENTATION = "segmentation"
NUM_CLASSES = {CLASSIFICATION: 3, SEGMENTATION: 4}


class SpecError(ValueError):
    """An architecture description is malformed or outside the search space."""


class ParamMismatchError(ValueError):
    """A ParamStore does not match the architecture it is used with."""


# -- architecture description ----------------------------------------------

@dataclass(frozen=True)
class LayerChoice:
    kernel: int | None = None
    expansion: int | None = None

    @property
    def is_identity(self) -> bool:
        return self.kernel is None

    def __post_init__(self):
        if (self.kernel is None) != (self.expansion is None):
            raise SpecError("MBConv needs both kernel and expansion; identity needs neither")
        if self.kernel is not None:
            if self.kernel % 2 == 0 or self.kernel not in KERNELS:
                raise SpecError(f"kernel {self.kernel} not in {KERNELS}")
            if self.expansion not in EXPANSIONS:
                raise SpecError(f"expansion {self.expansion} not in {EXPANSIONS}")

    def __str__(self) -> str:
        return "ID" if self.is_identity else f"MB_K{self.kernel}_E{self.expansion}"

    @classmethod
    def parse(cls, text: str) -> "LayerChoice":
        text = text.strip()
        if text == "ID":
            return IDENTITY
        m = re.fullmatch(r"MB_K(\d+)_E(\d+)", text)
        if not m:
            raise SpecError(f"unrecognized layer choice {text!r}")
        return cls(int(m.group(1)), int(m.group(2)))


def MB(kernel: int, expansion: int) -> LayerChoice:
    return LayerChoice(kernel, expansion)


IDENTITY = LayerChoice()


@dataclass(frozen=True)
class StageSpec:
    in_channels: int
    out_channels: int
    stride: int
    max_layers: int
    layers: tuple[LayerChoice, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.stride not in (1, 2):
            raise SpecError(f"stride must be 1 or 2, got {self.stride}")
        if not 1 <= len(self.layers) <= self.max_layers:
            raise SpecError(f"stage depth {len(self.layers)} outside [1, {self.max_layers}]")
        if self.layers[0].is_identity:
            raise SpecError("the first layer of a stage cannot be identity")

    def layer_io(self, j: int) -> tuple[int, int, int]:
        """(in_channels, out_channels, stride) of layer ``j``."""
        if j == 0:
            return self.in_channels, self.out_channels, self.stride
        return self.out_channels, self.out_channels, 1


@dataclass(frozen=True)
class HeadSpec:
    task: str
    num_classes: int

    def __post_init__(self):
        if self.task not in (CLASSIFICATION, SEGMENTATION):
            raise SpecError(f"unknown task {self.task!r}")
        if self.num_classes < 1:
            raise SpecError("num_classes must be positive")


@dataclass(frozen=True)
class StemSpec:
    in_channels: int = INPUT_CHANNELS
    out_channels: int = STEM_CHANNELS
    kernel: int = 3
    stride: int = 2


@dataclass(frozen=True)
class ArchitectureSpec:
    stages: tuple[StageSpec, ...]
    head: HeadSpec
    stem: StemSpec = field(default_factory=StemSpec)

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        prev = self.stem.out_channels
        for i, st in enumerate(self.stages, 1):
            if st.in_channels != prev:
                raise SpecError(f"stage{i} expects {st.in_channels} input channels, previous stage gives {prev}")
            prev = st.out_channels

    @property
    def depths(self) -> tuple[int, ...]:
        return tuple(len(s.layers) for s in self.stages)

    @property
    def feature_channels(self) -> int:
        return self.stages[-1].out_channels

    def output_stride(self) -> int:
        s = self.stem.stride
        for st in self.stages:
            s *= st.stride
        return s

    def with_layers(self, layers: list[list[LayerChoice]] | tuple) -> "ArchitectureSpec":
        stages = tuple(replace(st, layers=tuple(ls)) for st, ls in zip(self.stages, layers))
        return replace(self, stages=stages)

    def with_task(self, task: str) -> "ArchitectureSpec":
        return replace(self, head=HeadSpec(task, NUM_CLASSES[task]))

    def without_identity(self) -> "ArchitectureSpec":
        return self.with_layers([[c for c in st.layers if not c.is_identity] for st in self.stages])

    def same_space(self, other: "ArchitectureSpec") -> bool:
        """Whether both specs share stem, stage count, channel plan and strides."""
        if self.stem != other.stem or len(self.stages) != len(other.stages):
            return False
        return all(
            (a.in_channels, a.out_channels, a.stride) == (b.in_channels, b.out_channels, b.stride)
            for a, b in zip(self.stages, other.stages)
        )

    # text form: "#" header lines carry the fixed skeleton, then one line per layer
    def to_text(self) -> str:
        lines = [
            f"# stem in={self.stem.in_channels} out={self.stem.out_channels} "
            f"kernel={self.stem.kernel} stride={self.stem.stride}",
            f"# head task={self.head.task} classes={self.head.num_classes}",
        ]
        for i, st in enumerate(self.stages, 1):
            lines.append(f"# stage{i} in={st.in_channels} out={st.out_channels} "
                         f"stride={st.stride} max_layers={st.max_layers}")
        for i, st in enumerate(self.stages, 1):
            for j, c in enumerate(st.layers):
                lines.append(f"stage{i}.layer{j} = {c}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ArchitectureSpec":
        stem = StemSpec()
        head = None
        skeleton: dict[int, dict[str, int]] = {}
        layers: dict[int, dict[int, LayerChoice]] = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                words = line[1:].split()
                if not words:
                    continue
                kv = dict(w.split("=", 1) for w in words[1:] if "=" in w)
                if words[0] == "stem":
                    stem = StemSpec(int(kv["in"]), int(kv["out"]), int(kv["kernel"]), int(kv["stride"]))
                elif words[0] == "head":
                    head = HeadSpec(kv["task"], int(kv["classes"]))
                elif re.fullmatch(r"stage\d+", words[0]):
                    skeleton[int(words[0][5:])] = {k: int(v) for k, v in kv.items()}
                continue
            m = re.fullmatch(r"stage(\d+)\.layer(\d+)\s*=\s*(\S+)", line)
            if not m:
                raise SpecError(f"cannot parse spec line {raw!r}")
            layers.setdefault(int(m.group(1)), {})[int(m.group(2))] = LayerChoice.parse(m.group(3))
        if head is None:
            head = HeadSpec(SEGMENTATION, NUM_CLASSES[SEGMENTATION])
        if not skeleton:
            skeleton = {i + 1: {"in": s.in_channels, "out": s.out_channels, "stride": s.stride,
                                "max_layers": s.max_layers} for i, s in enumerate(default_stages())}
        stages = []
        for i in sorted(skeleton):
            sk = skeleton[i]
            got = layers.get(i, {})
            if sorted(got) != list(range(len(got))):
                raise SpecError(f"stage{i} layer indices are not contiguous from 0")
            stages.append(StageSpec(sk["in"], sk["out"], sk["stride"], sk["max_layers"],
                                    tuple(got[j] for j in range(len(got)))))
        return cls(tuple(stages), head, stem)


def default_stages(depths=SEED_DEPTHS, choice: LayerChoice | None = None) -> tuple[StageSpec, ...]:
    choice = choice or MB(SEED_KERNEL, SEED_EXPANSION)
    stages, cin = [], STEM_CHANNELS
    for cout, stride, depth, mx in zip(STAGE_CHANNELS, STAGE_STRIDES, depths, MAX_LAYERS):
        stages.append(StageSpec(cin, cout, stride, mx, (choice,) * depth))
        cin = cout
    return tuple(stages)


def seed_spec(task: str = CLASSIFICATION) -> ArchitectureSpec:
    return ArchitectureSpec(default_stages(), HeadSpec(task, NUM_CLASSES[task]))


# -- parameter store -----------------------------------------------------

class ParamStore:
    """Name-addressed weights plus batch-norm parameter sets.

    Iteration is lexicographic by name so initialization, serialization and
    hashing are deterministic.
    """

    def __init__(self, tensors: dict[str, Tensor] | None = None, bn: dict[str, BatchNormParams] | None = None):
        self.tensors: dict[str, Tensor] = dict(tensors or {})
        self.bn: dict[str, BatchNormParams] = dict(bn or {})

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __setitem__(self, name: str, t: Tensor) -> None:
        self.tensors[name] = t

    def __contains__(self, name: str) -> bool:
        return name in self.tensors or name in self.bn

    def __len__(self) -> int:
        return len(self.tensors) + len(self.bn)

    def names(self) -> list[str]:
        return sorted(list(self.tensors) + list(self.bn))

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for k in sorted(self.tensors):
            yield k, self.tensors[k]

    def bn_items(self) -> Iterator[tuple[str, BatchNormParams]]:
        for k in sorted(self.bn):
            yield k, self.bn[k]

    def trainable(self) -> list[Tensor]:
        out = [t for _, t in self.items()]
        for _, b in self.bn_items():
            out += [b.gamma, b.beta]
        return out

    def copy(self) -> "ParamStore":
        return ParamStore(
            {k: Tensor(t.data.copy(), requires_grad=t.requires_grad) for k, t in self.tensors.items()},
            {k: b.copy() for k, b in self.bn.items()},
        )

    def subset(self, prefix: str, strip: bool = False) -> "ParamStore":
        cut = len(prefix) if strip else 0
        return ParamStore(
            {k[cut:]: t for k, t in self.tensors.items() if k.startswith(prefix)},
            {k[cut:]: b for k, b in self.bn.items() if k.startswith(prefix)},
        )

    def update(self, other: "ParamStore", prefix: str = "") -> None:
        for k, t in other.tensors.items():
            self.tensors[prefix + k] = t
        for k, b in other.bn.items():
            self.bn[prefix + k] = b

    def flat(self) -> dict[str, np.ndarray]:
        """Every stored array by name; BN sets expand to five named vectors."""
        out = {k: t.data for k, t in self.tensors.items()}
        for k, b in self.bn.items():
            out[f"{k}.gamma"] = b.gamma.data
            out[f"{k}.beta"] = b.beta.data
            out[f"{k}.running_mean"] = b.running_mean
            out[f"{k}.running_var"] = b.running_var
            out[f"{k}.eps"] = np.array([b.eps], dtype=np.float32)
        return dict(sorted(out.items()))

    @classmethod
    def from_flat(cls, arrays: dict[str, np.ndarray]) -> "ParamStore":
        store = cls()
        bn_parts: dict[str, dict[str, np.ndarray]] = {}
        for name, arr in arrays.items():
            base, _, last = name.rpartition(".")
            if last in ("gamma", "beta", "running_mean", "running_var", "eps"):
                bn_parts.setdefault(base, {})[last] = arr
            else:
                store.tensors[name] = Tensor(arr, requires_grad=True, dtype=arr.dtype)
        for base, parts in bn_parts.items():
            missing = {"gamma", "beta", "running_mean", "running_var", "eps"} - set(parts)
            if missing:
                raise ParamMismatchError(f"batch-norm set {base!r} is missing {sorted(missing)}")
            store.bn[base] = BatchNormParams(
                gamma=Tensor(parts["gamma"], requires_grad=True, dtype=parts["gamma"].dtype),
                beta=Tensor(parts["beta"], requires_grad=True, dtype=parts["beta"].dtype),
                running_mean=np.array(parts["running_mean"]),
                running_var=np.array(parts["running_var"]),
                eps=float(parts["eps"].reshape(-1)[0]),
            )
        return store

    def digest(self) -> str:
        h = hashlib.sha256()
        for k, arr in self.flat().items():
            h.update(k.encode())
            h.update(str(arr.shape).encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def equals(self, other: "ParamStore") -> bool:
        a, b = self.flat(), other.flat()
        return a.keys() == b.keys() and all(
            a[k].shape == b[k].shape and a[k].dtype == b[k].dtype and a[k].tobytes() == b[k].tobytes() for k in a
        )


# -- shapes, init, validation -----------------------------------------------

def mbconv_shapes(choice: LayerChoice, cin: int, cout: int) -> tuple[dict[str, tuple], dict[str, int]]:
    """Weight shapes and BN widths of one MBConv layer (names relative to the layer)."""
    if choice.is_identity:
        return {}, {}
    mid = choice.expansion * cin
    k = choice.kernel
    return (
        {"pw1.weight": (mid, cin, 1, 1), "dw.weight": (mid, 1, k, k), "pw2.weight": (cout, mid, 1, 1)},
        {"bn1": mid, "bn2": mid, "bn3": cout},
    )


def has_residual(cin: int, cout: int, stride: int) -> bool:
    return stride == 1 and cin == cout


def layer_prefix(i: int, j: int) -> str:
    return f"stage{i}.layer{j}."


def required_shapes(spec: ArchitectureSpec) -> tuple[dict[str, tuple], dict[str, int]]:
    st = spec.stem
    tensors = {"stem.conv.weight": (st.out_channels, st.in_channels, st.kernel, st.kernel)}
    bns = {"stem.bn": st.out_channels}
    for i, stage in enumerate(spec.stages, 1):
        for j, choice in enumerate(stage.layers):
            cin, cout, _ = stage.layer_io(j)
            ts, bs = mbconv_shapes(choice, cin, cout)
            p = layer_prefix(i, j)
            tensors.update({p + k: v for k, v in ts.items()})
            bns.update({p + k: v for k, v in bs.items()})
    tensors.update(head_shapes(spec))
    return tensors, bns


def head_shapes(spec: ArchitectureSpec) -> dict[str, tuple]:
    c, n = spec.feature_channels, spec.head.num_classes
    if spec.head.task == CLASSIFICATION:
        return {"head.fc.weight": (n, c), "head.fc.bias": (n,)}
    return {"head.conv.weight": (n, c, 1, 1), "head.conv.bias": (n,)}


def validate(spec: ArchitectureSpec, params: ParamStore) -> None:
    """Raise ParamMismatchError naming the first offending entry."""
    tensors, bns = required_shapes(spec)
    problems = []
    for name, shape in tensors.items():
        if name not in params.tensors:
            problems.append((name, f"missing tensor {name} (expected shape {shape})"))
        elif params.tensors[name].shape != tuple(shape):
            problems.append((name, f"tensor {name} has shape {params.tensors[name].shape}, expected {shape}"))
    for name, c in bns.items():
        if name not in params.bn:
            problems.append((name, f"missing batch-norm set {name}"))
        elif params.bn[name].channels != c:
            problems.append((name, f"batch-norm set {name} has {params.bn[name].channels} channels, expected {c}"))
    for name in params.tensors:
        if name not in tensors:
            problems.append((name, f"unexpected tensor {name}"))
    for name in params.bn:
        if name not in bns:
            problems.append((name, f"unexpected batch-norm set {name}"))
    if problems:
        raise ParamMismatchError(sorted(problems)[0][1])


def he_normal(rng: np.random.Generator, shape: tuple, fan_in: int) -> Tensor:
    w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
    return Tensor(w.astype(np.float32), requires_grad=True)


def _fan_in(name: str, shape: tuple) -> int:
    if len(shape) == 4:
        return shape[1] * shape[2] * shape[3]
    return shape[-1]


def init_tensors(shapes: dict[str, tuple], bns: dict[str, int], rng: np.random.Generator) -> ParamStore:
    """He-style fan-in initialization; biases zero, BN at identity."""
    store = ParamStore()
    for name in sorted(shapes):
        shape = tuple(shapes[name])
        if name.endswith(".bias"):
            store.tensors[name] = Tensor(np.zeros(shape, np.float32), requires_grad=True)
        else:
            store.tensors[name] = he_normal(rng, shape, _fan_in(name, shape))
    for name in sorted(bns):
        store.bn[name] = BatchNormParams.init(bns[name])
    return store


def init_params(spec: ArchitectureSpec, rng: np.random.Generator) -> ParamStore:
    return init_tensors(*required_shapes(spec), rng)


def init_head(spec: ArchitectureSpec, rng: np.random.Generator) -> ParamStore:
    return init_tensors(head_shapes(spec), {}, rng)


def build_seed_network(task: str = CLASSIFICATION, rng: np.random.Generator | None = None
                       ) -> tuple[ArchitectureSpec, ParamStore]:
    """Desk-scale MobileNetV2-like seed: depths 2/2/3/2, every layer MB_K3_E6."""
    spec = seed_spec(task)
    rng = rng if rng is not None else np.random.default_rng(0)
    return spec, init_params(spec, rng)


# -- forward ------------------------------------------------------------

def mbconv_forward(x: Tensor, params: ParamStore, prefix: str, choice: LayerChoice,
                   cin: int, cout: int, stride: int, training: bool, update_stats: bool = True) -> Tensor:
    if choice.is_identity:
        return x
    bn = params.bn
    h = F.conv2d(x, params[prefix + "pw1.weight"])
    h = F.relu6(F.batch_norm(h, bn[prefix + "bn1"], training, update_stats))
    h = F.depthwise_conv2d(h, params[prefix + "dw.weight"], stride=stride, padding=(choice.kernel - 1) // 2)
    h = F.relu6(F.batch_norm(h, bn[prefix + "bn2"], training, update_stats))
    h = F.conv2d(h, params[prefix + "pw2.weight"])
    h = F.batch_norm(h, bn[prefix + "bn3"], training, update_stats)
    if has_residual(cin, cout, stride):
        h = h + x
    return h


def stem_forward(spec: ArchitectureSpec, params: ParamStore, x: Tensor, training: bool,
                 update_stats: bool = True) -> Tensor:
    st = spec.stem
    if x.ndim != 4 or x.shape[1] != st.in_channels:
        raise F.ShapeError(f"input {x.shape} does not match stem with {st.in_channels} input channels")
    h = F.conv2d(x, params["stem.conv.weight"], stride=st.stride, padding=(st.kernel - 1) // 2)
    return F.relu6(F.batch_norm(h, params.bn["stem.bn"], training, update_stats))


def head_forward(spec: ArchitectureSpec, params: ParamStore, h: Tensor, out_hw: tuple[int, int]) -> Tensor:
    if spec.head.task == CLASSIFICATION:
        return F.linear(F.global_avg_pool(h), params["head.fc.weight"], params["head.fc.bias"])
    logits = F.conv2d(h, params["head.conv.weight"], bias=params["head.conv.bias"])
    factor = out_hw[0] // h.shape[2]
    return F.upsample_nearest(logits, factor) if factor > 1 else logits


def forward_network(spec: ArchitectureSpec, params: ParamStore, x: Tensor, training: bool,
                    update_stats: bool = True, check: bool = True) -> Tensor:
    """Logits ``[N, classes]`` or per-pixel logits ``[N, classes, H, W]``."""
    if check:
        validate(spec, params)
    h = stem_forward(spec, params, x, training, update_stats)
    for i, stage in enumerate(spec.stages, 1):
        for j, choice in enumerate(stage.layers):
            cin, cout, stride = stage.layer_io(j)
            h = mbconv_forward(h, params, layer_prefix(i, j), choice, cin, cout, stride, training, update_stats)
    return head_forward(spec, params, h, x.shape[2:])


# -- MAdds --------------------------------------------------------------

def _out_hw(h: int, w: int, stride: int) -> tuple[int, int]:
    # "same" padding: floor((h - 1) / stride) + 1
    return (h - 1) // stride + 1, (w - 1) // stride + 1


def madds_of_layer(choice: LayerChoice, cin: int, cout: int, h_in: int, w_in: int, stride: int) -> int:
    if choice.is_identity:
        return 0
    e, k = choice.expansion, choice.kernel
    ho, wo = _out_hw(h_in, w_in, stride)
    mid = e * cin
    return mid * cin * h_in * w_in + mid * k * k * ho * wo + cout * mid * ho * wo


def stem_madds(spec: ArchitectureSpec, input_hw: tuple[int, int]) -> int:
    st = spec.stem
    ho, wo = _out_hw(*input_hw, st.stride)
    return st.out_channels * st.in_channels * st.kernel * st.kernel * ho * wo


def head_madds(spec: ArchitectureSpec, feat_hw: tuple[int, int]) -> int:
    c, n = spec.feature_channels, spec.head.num_classes
    if spec.head.task == CLASSIFICATION:
        return c * n
    return c * n * feat_hw[0] * feat_hw[1]


def stage_input_hw(spec: ArchitectureSpec, input_hw: tuple[int, int]) -> list[tuple[int, int]]:
    """Spatial size entering each stage."""
    hw = _out_hw(*input_hw, spec.stem.stride)
    out = []
    for st in spec.stages:
        out.append(hw)
        hw = _out_hw(*hw, st.stride)
    out.append(hw)
    return out


def madds_of_arch(spec: ArchitectureSpec, input_hw: tuple[int, int] = (INPUT_HW, INPUT_HW)) -> int:
    hws = stage_input_hw(spec, input_hw)
    total = stem_madds(spec, input_hw)
    for st, hw in zip(spec.stages, hws):
        for j, choice in enumerate(st.layers):
            cin, cout, stride = st.layer_io(j)
            h, w = hw if j == 0 else _out_hw(*hw, st.stride)
            total += madds_of_layer(choice, cin, cout, h, w, stride)
    return total + head_madds(spec, hws[-1])
