"""Cost-regularized differentiable search over the super network, plus a random-search baseline.

Weights are trained on single paths sampled from softmax(alpha); alpha is
trained on a held-out split through the full mixed forward with the loss
``task + lam * log_tau(expected MegaMAdds)``.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import SGD, Adam, Tensor, backward, no_grad
from .autodiff import functional as F
from .autodiff.optim import warmup_cosine
from .netgraph import (
    INPUT_HW,
    ArchitectureSpec,
    LayerChoice,
    ParamStore,
    madds_of_arch,
)
from .remap import RemapStrategy, remap_network
from .supernet import (
    DEFAULT_OPSET,
    SuperNet,
    derive_architecture,
    expand_seed,
    expected_madds,
    forward_path,
    forward_supernet,
    opset_for,
    sample_path,
)
from .tasks import Dataset
from .training import DivergenceError, TrainConfig, eval_loss, train

MEGA = 1e6
TELEMETRY_HEADER = ("step", "task_loss", "cost_reg", "expected_madds")


@dataclass
class SearchConfig:
    lam: float = 9e-3
    tau: float = 45.0
    total_epochs: int = 16
    warmup_epochs: int = 6
    val_split_fraction: float = 0.2
    w_lr: float = 0.02
    w_lr_start: float = 1e-4
    w_lr_floor: float = 1e-3
    w_lr_warmup_epochs: int = 1
    w_momentum: float = 0.9
    w_weight_decay: float = 5e-4
    alpha_lr: float = 1e-3
    alpha_weight_decay: float = 4e-5
    batch_size: int = 8
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_split_fraction < 1.0:
            raise ValueError(f"val_split_fraction must be in (0, 1), got {self.val_split_fraction}")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ValueError(f"need 0 <= warmup_epochs < total_epochs, got {self.warmup_epochs}, {self.total_epochs}")
        if not self.tau > 1.0:
            raise ValueError(f"tau must be > 1, got {self.tau}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class SearchState:
    """Step counter, optimizers, RNG streams and per-step telemetry of one search."""
    config: SearchConfig
    w_opt: SGD
    alpha_opt: Adam
    batch_rng: np.random.Generator
    path_rng: np.random.Generator
    steps_per_epoch: int
    epoch: int = 0
    step: int = 0
    telemetry: list[tuple[int, float, float, float]] = field(default_factory=list)

    @property
    def total_steps(self) -> int:
        return self.config.total_epochs * self.steps_per_epoch

    @property
    def warmup_steps(self) -> int:
        return self.config.warmup_epochs * self.steps_per_epoch

    @property
    def lr_warmup_steps(self) -> int:
        return self.config.w_lr_warmup_epochs * self.steps_per_epoch


def search_streams(rng_seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for the split, batch order and path sampling."""
    ss = np.random.SeedSequence(rng_seed)
    split, batches, paths = ss.spawn(3)
    return {"split": np.random.default_rng(split), "batches": np.random.default_rng(batches),
            "paths": np.random.default_rng(paths)}


def split_dataset(data: Dataset, fraction: float, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """Random disjoint (train, val) split with ``round(fraction * n)`` validation samples."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    n = len(data)
    n_val = int(round(fraction * n))
    if n_val == 0 or n_val == n:
        raise ValueError(f"splitting {n} samples with fraction {fraction} leaves an empty side")
    order = rng.permutation(n)
    return data.subset(np.sort(order[n_val:])), data.subset(np.sort(order[:n_val]))


def cost_regularizer(net: SuperNet, lam: float, tau: float,
                     input_hw: tuple[int, int] = (INPUT_HW, INPUT_HW)) -> Tensor:
    """``lam * ln(cost) / ln(tau)`` with cost the softmax-expected MegaMAdds."""
    if not tau > 1.0:
        raise ValueError(f"tau must be > 1, got {tau}")
    cost = expected_madds(net, input_hw, scale=MEGA)
    if not float(cost.data) > 0:
        raise ValueError(f"expected cost must be positive, got {float(cost.data)}")
    return F.log(cost) * (lam / math.log(tau))


def _set_requires_grad(tensors: list[Tensor], flag: bool) -> None:
    for t in tensors:
        t.requires_grad = flag


def new_state(net: SuperNet, train_size: int, config: SearchConfig,
              streams: dict[str, np.random.Generator] | None = None) -> SearchState:
    streams = streams or search_streams(config.rng_seed)
    steps_per_epoch = max(train_size // config.batch_size, 1)
    return SearchState(
        config=config,
        w_opt=SGD(net.weights(), lr=config.w_lr, momentum=config.w_momentum, weight_decay=config.w_weight_decay),
        alpha_opt=Adam(net.alphas(), lr=config.alpha_lr, weight_decay=config.alpha_weight_decay),
        batch_rng=streams["batches"],
        path_rng=streams["paths"],
        steps_per_epoch=steps_per_epoch,
    )


def _w_lr(state: SearchState) -> float:
    c = state.config
    return warmup_cosine(state.step, state.total_steps, c.w_lr, state.lr_warmup_steps, c.w_lr_start, c.w_lr_floor)


def weight_step(net: SuperNet, x: np.ndarray, y: np.ndarray, state: SearchState) -> float:
    """One SGD step on a path drawn from softmax(alpha); only that path's weights move."""
    _, path = sample_path(net, state.path_rng)
    state.w_opt.zero_grad()
    state.w_opt.set_lr(_w_lr(state))
    alphas = net.alphas()
    _set_requires_grad(alphas, False)
    try:
        loss = F.cross_entropy(forward_path(net, path, Tensor(x), training=True), y)
        value = float(loss.data)
        if not math.isfinite(value):
            raise DivergenceError(state.step, value)
        backward(loss)
    finally:
        _set_requires_grad(alphas, True)
    state.w_opt.step()
    return value


def alpha_step(net: SuperNet, x: np.ndarray, y: np.ndarray, state: SearchState,
               include_task: bool = True) -> tuple[float, float, float]:
    """One Adam step on alpha through the mixed forward; BN statistics are not updated."""
    c = state.config
    weights = net.weights()
    _set_requires_grad(weights, False)
    try:
        state.alpha_opt.zero_grad()
        reg = cost_regularizer(net, c.lam, c.tau)
        if include_task:
            task = F.cross_entropy(forward_supernet(net, Tensor(x), training=True, update_stats=False), y)
            loss = F.cast(task, np.float64) + reg
            task_value = float(task.data)
        else:
            loss, task_value = reg, float("nan")
        if not math.isfinite(float(loss.data)):
            raise DivergenceError(state.step, float(loss.data))
        if c.lam > 0 or include_task:
            backward(loss)
            state.alpha_opt.step()
    finally:
        _set_requires_grad(weights, True)
    return task_value, float(reg.data), _expected_mmadds(net)


def _expected_mmadds(net: SuperNet) -> float:
    with no_grad():
        return float(expected_madds(net, scale=MEGA).data)


def warmup_weights(net: SuperNet, train_data: Dataset, state: SearchState) -> None:
    """Run the remaining warmup epochs: weight steps only, alpha untouched."""
    c = state.config
    while state.epoch < c.warmup_epochs:
        for x, y in train_data.batches(c.batch_size, state.batch_rng):
            loss = weight_step(net, x, y, state)
            with no_grad():
                reg = float(cost_regularizer(net, c.lam, c.tau).data)
            state.telemetry.append((state.step, loss, reg, _expected_mmadds(net)))
            state.step += 1
        state.epoch += 1


def alternate_step(net: SuperNet, train_batch: tuple[np.ndarray, np.ndarray],
                   val_batch: tuple[np.ndarray, np.ndarray], state: SearchState) -> tuple[int, float, float, float]:
    """A weight step on ``train_batch`` followed by an alpha step on ``val_batch``."""
    if state.epoch < state.config.warmup_epochs:
        raise RuntimeError("alternate_step called before warmup finished")
    weight_step(net, *train_batch, state)
    task, reg, mmadds = alpha_step(net, *val_batch, state)
    row = (state.step, task, reg, mmadds)
    state.telemetry.append(row)
    state.step += 1
    return row


@dataclass
class SearchResult:
    spec: ArchitectureSpec
    net: SuperNet
    telemetry: list[tuple[int, float, float, float]]
    train: Dataset
    val: Dataset


def run_search(seed: tuple[ArchitectureSpec, ParamStore], data: Dataset, config: SearchConfig,
               strategy: RemapStrategy = RemapStrategy(), net: SuperNet | None = None) -> SearchResult:
    """Expand the seed, warm up, alternate until ``total_epochs`` and derive the argmax architecture.

    ``seed`` must already carry a head for ``data.task``. Passing ``net`` skips
    the expansion (used for randomly initialized super networks).
    """
    streams = search_streams(config.rng_seed)
    train_data, val_data = split_dataset(data, config.val_split_fraction, streams["split"])
    if net is None:
        net = expand_seed(seed, strategy=strategy)
    state = new_state(net, len(train_data), config, streams)
    warmup_weights(net, train_data, state)
    while state.epoch < config.total_epochs:
        for x, y in train_data.batches(config.batch_size, state.batch_rng):
            val = val_data.sample_batch(config.batch_size, state.batch_rng)
            alternate_step(net, (x, y), val, state)
        state.epoch += 1
    return SearchResult(derive_architecture(net), net, state.telemetry, train_data, val_data)


def search_step_budget(n_train: int, config: SearchConfig) -> int:
    """Weight steps a differentiable search spends; random search can be given the same budget."""
    return config.total_epochs * max(n_train // config.batch_size, 1)


# -- random search --------------------------------------------------------

def uniform_spec(base: ArchitectureSpec, rng: np.random.Generator,
                 opset: tuple[LayerChoice, ...] = DEFAULT_OPSET) -> ArchitectureSpec:
    """One uniformly drawn architecture of the expanded space (identity layers dropped)."""
    layers = []
    for st in base.stages:
        row = []
        for j in range(st.max_layers):
            choices = opset_for(j, opset)
            row.append(choices[int(rng.integers(len(choices)))])
        layers.append(row)
    return base.with_layers(layers).without_identity()


@dataclass
class RandomSearchResult:
    spec: ArchitectureSpec
    candidates: list[tuple[ArchitectureSpec, float]]   # (spec, validation loss)
    train_steps: int


def random_search(seed: tuple[ArchitectureSpec, ParamStore], data: Dataset, n_candidates: int,
                  finetune_steps: int, rng: np.random.Generator, val_fraction: float = 0.2,
                  strategy: RemapStrategy = RemapStrategy(), train_cfg: TrainConfig | None = None
                  ) -> RandomSearchResult:
    """Sample, remap, briefly fine-tune and keep the candidate with the lowest validation loss."""
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    seed_spec, _ = seed
    train_data, val_data = split_dataset(data, val_fraction, rng)
    base = seed_spec
    cfg = train_cfg or TrainConfig()
    cfg = TrainConfig(**{**asdict(cfg), "steps": finetune_steps,
                         "warmup_steps": min(cfg.warmup_steps, finetune_steps // 10)})
    scored: list[tuple[ArchitectureSpec, float]] = []
    total = 0
    for _ in range(n_candidates):
        spec = uniform_spec(base, rng)
        params = remap_network(seed, spec, strategy, rng)
        if finetune_steps > 0:
            total += len(train(spec, params, train_data, cfg, rng))
        scored.append((spec, eval_loss(spec, params, val_data)))
    best = min(range(len(scored)), key=lambda i: scored[i][1])
    return RandomSearchResult(scored[best][0], scored, total)


# -- telemetry ------------------------------------------------------------

def write_telemetry(rows, path: str | os.PathLike, header=TELEMETRY_HEADER) -> None:
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(str(v) if isinstance(v, int) else repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_telemetry(path: str | os.PathLike) -> list[tuple]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [tuple(int(v) if i == 0 else float(v) for i, v in enumerate(line.split("\t"))) for line in lines[1:]]


def derived_madds(spec: ArchitectureSpec) -> int:
    return madds_of_arch(spec)
