"""End-to-end adaptation runs, the ablation harness and the thin standalone commands.

Every command takes a :class:`PipelineConfig` (mirrored 1:1 by the JSON config
file) and writes its artifacts under ``out_dir``. Each phase draws from its own
seed-derived generator, so switching one phase's init mode leaves the inputs of
every other phase bit-identical.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from .checkpoint import load_arrays, load_checkpoint, save_arrays, save_checkpoint
from .netgraph import (
    CLASSIFICATION,
    NUM_CLASSES,
    SEGMENTATION,
    ArchitectureSpec,
    ParamStore,
    build_seed_network,
    init_params,
    madds_of_arch,
    seed_spec,
    validate,
)
from .remap import STRATEGIES, remap_network, retarget_head
from .search import (
    SearchConfig,
    random_search,
    run_search,
    search_step_budget,
    write_telemetry,
)
from .supernet import SuperNet, derive_architecture, expand_seed, random_supernet
from .tasks import Dataset, DatasetSpec, gen_dataset, miou
from .training import TrainConfig, bn_recalibrate, evaluate, train

REMAP, RANDINIT, RETRAIN = "remap", "randinit", "retrain"
ARCH_INITS = (REMAP, RANDINIT)
PARAM_INITS = (REMAP, RANDINIT, RETRAIN)
DIFFSEARCH, RANDSEARCH = "diffsearch", "randsearch"
SEARCH_MODES = (DIFFSEARCH, RANDSEARCH)

# stable ids for the per-phase generators
_PHASES = {"pretrain": 1, "head": 2, "arch_init": 3, "randsearch": 4, "param_init": 5,
           "retrain": 6, "recalib": 7, "finetune": 8}


class ConfigError(ValueError):
    pass


class PhaseError(RuntimeError):
    """A pipeline phase failed; ``__cause__`` holds the original error."""

    def __init__(self, phase: str, err: BaseException):
        super().__init__(f"[{phase}] {type(err).__name__}: {err}")
        self.phase = phase


@contextmanager
def phase(name: str):
    try:
        yield
    except PhaseError:
        raise
    except (ConfigError, OSError):
        raise
    except Exception as e:  # noqa: BLE001 - re-raised with the phase tag
        raise PhaseError(name, e) from e


# -- configuration --------------------------------------------------------

@dataclass
class PretrainConfig(TrainConfig):
    steps: int = 3000
    batch_size: int = 16
    target_accuracy: float = 0.9
    check_every: int = 100


@dataclass
class AblateConfig:
    preset: str = "table5"
    modes: list[dict] | None = None       # explicit rows; overrides the preset
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])


@dataclass
class PipelineConfig:
    task: str = SEGMENTATION
    seed_checkpoint: str | None = None
    strategy: str = "center"
    arch_init: str = REMAP
    param_init: str = REMAP
    search_mode: str = DIFFSEARCH
    random_search_candidates: int = 4
    fixed_arch: str | None = None          # spec text file; skips the search
    bn_recalib_steps: int = 200
    bn_recalib_batch: int = 16
    rng_seed: int = 0
    out_dir: str = "runs/fna"
    figures: bool = True
    search: SearchConfig = field(default_factory=SearchConfig)
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig(lr=0.01, lr_floor=0.0))
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    seed_data: DatasetSpec = field(default_factory=lambda: DatasetSpec(1024, rng_seed=1))
    target_train: DatasetSpec = field(default_factory=lambda: DatasetSpec(160, rng_seed=2))
    target_test: DatasetSpec = field(default_factory=lambda: DatasetSpec(200, rng_seed=3))
    ablate: AblateConfig = field(default_factory=AblateConfig)
    # standalone commands
    remap_target: str | None = None        # spec text file; default is the seed spec
    supernet_checkpoint: str | None = None
    eval_checkpoint: str | None = None
    eval_arch: str | None = None
    eval_predictions: str | None = None

    def validate(self) -> None:
        _check_choice("task", self.task, (CLASSIFICATION, SEGMENTATION))
        _check_choice("strategy", self.strategy, tuple(STRATEGIES))
        _check_choice("arch_init", self.arch_init, ARCH_INITS)
        _check_choice("param_init", self.param_init, PARAM_INITS)
        _check_choice("search_mode", self.search_mode, SEARCH_MODES)
        if self.random_search_candidates < 1:
            raise ConfigError("random_search_candidates must be >= 1")
        if self.bn_recalib_steps < 0:
            raise ConfigError("bn_recalib_steps must be >= 0")
        for name in ("finetune", "pretrain"):
            tc = getattr(self, name)
            if tc.steps < 0 or tc.batch_size < 1 or tc.lr <= 0:
                raise ConfigError(f"{name}: steps >= 0, batch_size >= 1 and lr > 0 are required")
        for name in ("seed_checkpoint", "fixed_arch", "remap_target", "supernet_checkpoint",
                     "eval_checkpoint", "eval_arch", "eval_predictions"):
            path = getattr(self, name)
            if path is not None and not Path(path).exists():
                raise ConfigError(f"{name}: {path} does not exist")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["search"]["lambda"] = d["search"].pop("lam")
        return d


def _check_choice(name: str, value, allowed) -> None:
    if value not in allowed:
        raise ConfigError(f"{name} must be one of {list(allowed)}, got {value!r}")


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        name = "lam" if (cls is SearchConfig and key == "lambda") else key
        if name not in known:
            raise ConfigError(f"{where}: unknown key {key!r}")
        sub = _NESTED.get((cls, name))
        kwargs[name] = _build(sub, value, f"{where}.{key}") if sub else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e


_NESTED = {
    (PipelineConfig, "search"): SearchConfig,
    (PipelineConfig, "finetune"): TrainConfig,
    (PipelineConfig, "pretrain"): PretrainConfig,
    (PipelineConfig, "seed_data"): DatasetSpec,
    (PipelineConfig, "target_train"): DatasetSpec,
    (PipelineConfig, "target_test"): DatasetSpec,
    (PipelineConfig, "ablate"): AblateConfig,
}


def config_from_dict(data: dict) -> PipelineConfig:
    return _build(PipelineConfig, data, "config")


def load_config(path: str | os.PathLike) -> PipelineConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return config_from_dict(data)


def with_seed(cfg: PipelineConfig, rng_seed: int) -> PipelineConfig:
    """Same config with the master seed (and the search seed) replaced."""
    return replace(cfg, rng_seed=rng_seed, search=replace(cfg.search, rng_seed=rng_seed))


def phase_rng(cfg: PipelineConfig, name: str) -> np.random.Generator:
    return np.random.default_rng([cfg.rng_seed, _PHASES[name]])


# -- reports --------------------------------------------------------------

@dataclass
class RunReport:
    mode: str
    metric_name: str
    metric: float
    madds: int
    derived_spec: str
    wall_clock_s: float
    seeds: dict[str, int]
    config: dict
    phase_digests: dict[str, str] = field(default_factory=dict)
    telemetry: dict[str, str] = field(default_factory=dict)
    artifacts: dict[str, str] = field(default_factory=dict)
    figures: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def mode_label(cfg: PipelineConfig) -> str:
    search = "ArchAdapt" if cfg.search_mode == DIFFSEARCH else "RandSearch"
    names = {REMAP: "Remap", RANDINIT: "RandInit", RETRAIN: "Retrain"}
    label = f"{names[cfg.arch_init]} -> {search} -> {names[cfg.param_init]} -> ParamAdapt"
    if cfg.fixed_arch:
        label = f"fixed arch -> {names[cfg.param_init]}({cfg.strategy}) -> ParamAdapt"
    return label


def _text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _supernet_digest(net: SuperNet) -> str:
    h = hashlib.sha256()
    for k, v in net.to_flat().items():
        h.update(k.encode())
        h.update(np.ascontiguousarray(v).tobytes())
    return h.hexdigest()


# -- shared pieces --------------------------------------------------------

def load_seed(cfg: PipelineConfig) -> tuple[ArchitectureSpec, ParamStore]:
    if cfg.seed_checkpoint is None:
        raise ConfigError("seed_checkpoint is required (run `fna pretrain` first)")
    params = load_checkpoint(cfg.seed_checkpoint)
    spec = seed_spec(CLASSIFICATION)
    validate(spec, params)
    return spec, params


def read_spec(path: str | os.PathLike) -> ArchitectureSpec:
    return ArchitectureSpec.from_text(Path(path).read_text(encoding="utf-8"))


def write_spec(spec: ArchitectureSpec, path: str | os.PathLike) -> None:
    Path(path).write_text(spec.to_text(), encoding="utf-8")


def target_data(cfg: PipelineConfig) -> tuple[Dataset, Dataset]:
    return gen_dataset(cfg.task, cfg.target_train), gen_dataset(cfg.task, cfg.target_test)


def pretrain_network(spec: ArchitectureSpec, params: ParamStore, data: Dataset, pcfg: PretrainConfig,
                     rng: np.random.Generator) -> tuple[list[float], float]:
    """Train until the train accuracy reaches ``pcfg.target_accuracy`` or the budget runs out."""
    probe = data.subset(np.arange(min(len(data), 256)))
    state = {"acc": 0.0}

    def on_step(step: int, _loss: float) -> bool:
        if (step + 1) % pcfg.check_every == 0:
            state["acc"] = evaluate(spec, params, probe)
            return state["acc"] >= pcfg.target_accuracy
        return False

    losses = train(spec, params, data, pcfg, rng, on_step)
    state["acc"] = evaluate(spec, params, data)
    return losses, state["acc"]


def _out(cfg: PipelineConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _figures(cfg: PipelineConfig):
    if not cfg.figures:
        return None
    from . import plotting
    return plotting


# -- commands -------------------------------------------------------------

def cmd_pretrain_seed(cfg: PipelineConfig) -> RunReport:
    """Train the seed network on the classification task and write ``seed.fna``."""
    cfg.validate()
    out = _out(cfg)
    t0 = time.perf_counter()
    with phase("pretrain"):
        rng = phase_rng(cfg, "pretrain")
        spec, params = build_seed_network(CLASSIFICATION, rng)
        data = gen_dataset(CLASSIFICATION, cfg.seed_data)
        losses, acc = pretrain_network(spec, params, data, cfg.pretrain, rng)
    ckpt, arch = out / "seed.fna", out / "seed.arch"
    save_checkpoint(params, ckpt)
    write_spec(spec, arch)
    write_telemetry(enumerate(losses), out / "pretrain_telemetry.tsv", ("step", "loss"))
    report = RunReport(
        mode="pretrain", metric_name="train_accuracy", metric=acc, madds=madds_of_arch(spec),
        derived_spec=spec.to_text(), wall_clock_s=time.perf_counter() - t0,
        seeds={"rng_seed": cfg.rng_seed, "data_seed": cfg.seed_data.rng_seed}, config=cfg.to_dict(),
        phase_digests={"seed": params.digest()},
        telemetry={"pretrain": str(out / "pretrain_telemetry.tsv")},
        artifacts={"checkpoint": str(ckpt), "arch": str(arch)},
    )
    plots = _figures(cfg)
    if plots:
        report.figures.append(plots.plot_loss_curves({"seed pretrain": losses}, out / "pretrain_loss.png",
                                                     title="seed pretraining"))
    report.save(out / "report.json")
    return report


def adapt_architecture(cfg: PipelineConfig, seed_t: tuple[ArchitectureSpec, ParamStore], train_data: Dataset,
                       out: Path, report: RunReport) -> tuple[ArchitectureSpec, SuperNet | None]:
    if cfg.fixed_arch:
        spec = read_spec(cfg.fixed_arch).with_task(cfg.task)
        if not seed_t[0].same_space(spec):
            raise ConfigError(f"fixed_arch {cfg.fixed_arch} is not in the seed's expanded space")
        return spec, None
    if cfg.search_mode == DIFFSEARCH:
        if cfg.arch_init == REMAP:
            net = expand_seed(seed_t, strategy=STRATEGIES[cfg.strategy])
        else:
            net = random_supernet(seed_t[0], phase_rng(cfg, "arch_init"))
        report.phase_digests["supernet_init"] = _supernet_digest(net)
        result = run_search(seed_t, train_data, cfg.search, net=net)
        tsv = out / "search_telemetry.tsv"
        write_telemetry(result.telemetry, tsv)
        report.telemetry["search"] = str(tsv)
        save_arrays(result.net.to_flat(), out / "supernet.fna")
        report.artifacts["supernet"] = str(out / "supernet.fna")
        return result.spec, result.net
    # random search with the same weight-step budget as the differentiable search
    n_train = len(train_data) - int(round(cfg.search.val_split_fraction * len(train_data)))
    budget = search_step_budget(n_train, cfg.search)
    n = cfg.random_search_candidates
    rng = phase_rng(cfg, "randsearch")
    source = seed_t
    if cfg.arch_init == RANDINIT:
        source = (seed_t[0], init_params(seed_t[0], phase_rng(cfg, "arch_init")))
    tcfg = replace(cfg.finetune, batch_size=cfg.search.batch_size)
    result = random_search(source, train_data, n, budget // n, rng, cfg.search.val_split_fraction,
                           STRATEGIES[cfg.strategy], tcfg)
    tsv = out / "randsearch_candidates.tsv"
    write_telemetry([(i, loss, float(madds_of_arch(s))) for i, (s, loss) in enumerate(result.candidates)],
                    tsv, ("candidate", "val_loss", "madds"))
    report.telemetry["randsearch"] = str(tsv)
    return result.spec, None


def adapt_parameters(cfg: PipelineConfig, seed_t: tuple[ArchitectureSpec, ParamStore],
                     spec: ArchitectureSpec) -> ParamStore:
    strategy = STRATEGIES[cfg.strategy]
    if cfg.param_init == REMAP:
        return remap_network(seed_t, spec, strategy, phase_rng(cfg, "head"))
    if cfg.param_init == RANDINIT:
        return init_params(spec, phase_rng(cfg, "param_init"))
    # retrain: pretrain the derived architecture on the seed task, then carry it over
    rng = phase_rng(cfg, "retrain")
    cls_spec = spec.with_task(CLASSIFICATION)
    params = init_params(cls_spec, rng)
    pretrain_network(cls_spec, params, gen_dataset(CLASSIFICATION, cfg.seed_data), cfg.pretrain, rng)
    return remap_network((cls_spec, params), spec, strategy, phase_rng(cfg, "head"))


def cmd_adapt(cfg: PipelineConfig, arch_cache: dict | None = None) -> RunReport:
    """Expand, search, remap, recalibrate BN, fine-tune and evaluate.

    ``arch_cache`` lets the ablation harness reuse a search shared by several
    rows; the key covers every input of the architecture phase.
    """
    cfg.validate()
    out = _out(cfg)
    t0 = time.perf_counter()
    seed = load_seed(cfg)
    report = RunReport(mode=mode_label(cfg), metric_name="accuracy" if cfg.task == CLASSIFICATION else "miou",
                       metric=float("nan"), madds=0, derived_spec="", wall_clock_s=0.0,
                       seeds={"rng_seed": cfg.rng_seed, "search_seed": cfg.search.rng_seed,
                              "train_data_seed": cfg.target_train.rng_seed,
                              "test_data_seed": cfg.target_test.rng_seed},
                       config=cfg.to_dict())
    report.phase_digests["seed"] = seed[1].digest()
    train_data, test_data = target_data(cfg)
    plots = _figures(cfg)

    with phase("expand"):
        seed_t = retarget_head(seed, cfg.task, phase_rng(cfg, "head"))
        report.phase_digests["seed_retargeted"] = seed_t[1].digest()
    with phase("architecture"):
        key = json.dumps([cfg.arch_init, cfg.search_mode, cfg.fixed_arch, cfg.strategy, asdict(cfg.search),
                          cfg.random_search_candidates, cfg.rng_seed, report.phase_digests["seed"],
                          asdict(cfg.target_train), asdict(cfg.finetune)], sort_keys=True)
        if arch_cache is not None and key in arch_cache:
            spec, net, cached = arch_cache[key]
            report.telemetry.update(cached.telemetry)
            report.artifacts.update(cached.artifacts)
            report.phase_digests.update({k: v for k, v in cached.phase_digests.items() if k == "supernet_init"})
        else:
            spec, net = adapt_architecture(cfg, seed_t, train_data, out, report)
            if arch_cache is not None:
                arch_cache[key] = (spec, net, report)
    arch_path = out / "derived.arch"
    write_spec(spec, arch_path)
    report.artifacts["arch"] = str(arch_path)
    report.derived_spec = spec.to_text()
    report.phase_digests["derived_spec"] = _text_digest(report.derived_spec)
    report.madds = madds_of_arch(spec)

    with phase("param_init"):
        params = adapt_parameters(cfg, seed_t, spec)
        report.phase_digests["target_init"] = params.digest()
    with phase("bn_recalib"):
        params = bn_recalibrate(spec, params, train_data, cfg.bn_recalib_steps, cfg.bn_recalib_batch,
                                phase_rng(cfg, "recalib"))
        report.phase_digests["target_recalibrated"] = params.digest()
    with phase("finetune"):
        losses = train(spec, params, train_data, cfg.finetune, phase_rng(cfg, "finetune"))
        report.phase_digests["target_final"] = params.digest()
    tsv = out / "finetune_telemetry.tsv"
    write_telemetry(enumerate(losses), tsv, ("step", "loss"))
    report.telemetry["finetune"] = str(tsv)
    save_checkpoint(params, out / "target.fna")
    report.artifacts["target"] = str(out / "target.fna")
    with phase("evaluate"):
        report.metric = evaluate(spec, params, test_data)
    if plots:
        report.figures.append(plots.plot_loss_curves({report.mode: losses}, out / "finetune_loss.png",
                                                     title="parameter adaptation"))
        if net is not None and "search" in report.telemetry:
            report.figures.append(plots.plot_search_telemetry(report.telemetry["search"], out / "search.png"))
            report.figures.append(plots.plot_alpha_heatmap(net, out / "alpha.png"))
    report.wall_clock_s = time.perf_counter() - t0
    report.save(out / "report.json")
    return report


# -- ablation -------------------------------------------------------------

PRESETS: dict[str, list[dict]] = {
    "table5": [
        {"label": "(1) Remap -> ArchAdapt -> Remap -> ParamAdapt", "arch_init": REMAP, "param_init": REMAP},
        {"label": "(2) RandInit -> ArchAdapt -> Remap -> ParamAdapt", "arch_init": RANDINIT, "param_init": REMAP},
        {"label": "(3) Remap -> ArchAdapt -> RandInit -> ParamAdapt", "arch_init": REMAP, "param_init": RANDINIT},
        {"label": "(4) RandInit -> ArchAdapt -> RandInit -> ParamAdapt", "arch_init": RANDINIT,
         "param_init": RANDINIT},
        {"label": "(5) Remap -> ArchAdapt -> Retrain(synthetic cls) -> ParamAdapt", "arch_init": REMAP,
         "param_init": RETRAIN},
    ],
    "table6": [
        {"label": "(2) Remap -> DiffSearch -> Remap -> ParamAdapt", "search_mode": DIFFSEARCH},
        {"label": "(3) Remap -> RandSearch -> Remap -> ParamAdapt", "search_mode": RANDSEARCH},
        {"label": "(4) RandInit -> RandSearch -> Remap -> ParamAdapt", "search_mode": RANDSEARCH,
         "arch_init": RANDINIT},
        {"label": "(5) Remap -> RandSearch -> RandInit -> ParamAdapt", "search_mode": RANDSEARCH,
         "param_init": RANDINIT},
        {"label": "(6) RandInit -> RandSearch -> RandInit -> ParamAdapt", "search_mode": RANDSEARCH,
         "arch_init": RANDINIT, "param_init": RANDINIT},
    ],
    "strategies": [{"label": name, "strategy": name} for name in ("center", "dilate", "bn", "std", "l1")],
}

_ROW_KEYS = {"label", "arch_init", "param_init", "search_mode", "strategy"}


@dataclass
class AblationRow:
    label: str
    overrides: dict
    metrics: list[float] = field(default_factory=list)
    madds: list[int] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    def stats(self, values) -> tuple[float, float, float]:
        if not values:
            return float("nan"), float("nan"), float("nan")
        v = np.asarray(values, dtype=np.float64)
        return float(np.median(v)), float(v.min()), float(v.max())

    def summary(self) -> dict:
        med, lo, hi = self.stats(self.metrics)
        mmed, mlo, mhi = self.stats(self.madds)
        return {"label": self.label, "runs": len(self.metrics), "failures": len(self.failures),
                "metric_median": med, "metric_min": lo, "metric_max": hi,
                "madds_median": mmed, "madds_min": mlo, "madds_max": mhi}


def ablation_rows(cfg: PipelineConfig) -> list[dict]:
    if cfg.ablate.modes is not None:
        rows = cfg.ablate.modes
    elif cfg.ablate.preset in PRESETS:
        rows = PRESETS[cfg.ablate.preset]
    else:
        raise ConfigError(f"unknown ablation preset {cfg.ablate.preset!r}; choose from {sorted(PRESETS)}")
    for i, row in enumerate(rows):
        bad = set(row) - _ROW_KEYS
        if bad:
            raise ConfigError(f"ablate.modes[{i}]: unknown keys {sorted(bad)}")
        probe = replace(cfg, **{k: v for k, v in row.items() if k != "label"})
        probe.validate()
    return [dict(row, label=row.get("label", f"row{i}")) for i, row in enumerate(rows)]


def cmd_ablate(cfg: PipelineConfig) -> list[AblationRow]:
    """Run every mode row for every seed with identical budgets; one failed run never stops the rest.

    The strategy preset without ``fixed_arch`` first runs one default search
    (first seed) and shares its derived architecture across all rows.
    """
    cfg.validate()
    out = _out(cfg)
    specs = ablation_rows(cfg)
    if cfg.ablate.preset == "strategies" and cfg.ablate.modes is None and cfg.fixed_arch is None:
        with phase("shared_arch"):
            base = replace(with_seed(cfg, cfg.ablate.seeds[0]), out_dir=str(out / "shared_arch"), figures=False)
            base.validate()
            spec, _ = adapt_architecture(base, retarget_head(load_seed(base), base.task, phase_rng(base, "head")),
                                         target_data(base)[0], _out(base), RunReport(
                                             "shared", "", 0.0, 0, "", 0.0, {}, {}))
            shared = out / "shared.arch"
            write_spec(spec, shared)
            cfg = replace(cfg, fixed_arch=str(shared))
    cache: dict = {}
    rows = []
    for i, row in enumerate(specs):
        overrides = {k: v for k, v in row.items() if k != "label"}
        result = AblationRow(row["label"], overrides)
        for s in cfg.ablate.seeds:
            run_cfg = replace(with_seed(cfg, s), **overrides, out_dir=str(out / f"row{i}" / f"seed{s}"),
                              figures=False)
            try:
                rep = cmd_adapt(run_cfg, cache)
            except Exception as e:  # noqa: BLE001 - per-row failures are reported, not fatal
                result.failures.append(f"seed {s}: {e}")
                continue
            result.metrics.append(rep.metric)
            result.madds.append(rep.madds)
        rows.append(result)
    write_ablation_table(rows, out / "ablation.tsv")
    (out / "ablation.json").write_text(json.dumps(
        {"config": cfg.to_dict(), "rows": [dict(r.summary(), overrides=r.overrides, metrics=r.metrics,
                                                  madds=r.madds, errors=r.failures) for r in rows]},
        indent=2, sort_keys=True) + "\n", encoding="utf-8")
    plots = _figures(cfg)
    if plots:
        plots.plot_ablation([r.summary() for r in rows], out / "ablation.png")
    return rows


ABLATION_COLUMNS = ("label", "runs", "failures", "metric_median", "metric_min", "metric_max",
                    "madds_median", "madds_min", "madds_max")


def write_ablation_table(rows: list[AblationRow], path: str | os.PathLike) -> None:
    lines = ["\t".join(ABLATION_COLUMNS)]
    for r in rows:
        s = r.summary()
        lines.append("\t".join(str(s[c]) for c in ABLATION_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- standalone commands ---------------------------------------------------

def cmd_remap(cfg: PipelineConfig) -> Path:
    """Remap the seed onto ``remap_target`` (default: the seed spec itself)."""
    cfg.validate()
    out = _out(cfg)
    seed = load_seed(cfg)
    target = read_spec(cfg.remap_target) if cfg.remap_target else seed[0]
    with phase("remap"):
        params = remap_network(seed, target, STRATEGIES[cfg.strategy], phase_rng(cfg, "head"))
    path = out / "remapped.fna"
    save_checkpoint(params, path)
    write_spec(target, out / "remapped.arch")
    return path


def cmd_derive(cfg: PipelineConfig) -> Path:
    """Argmax architecture of a saved super network, written as spec text."""
    cfg.validate()
    if cfg.supernet_checkpoint is None:
        raise ConfigError("supernet_checkpoint is required")
    out = _out(cfg)
    with phase("derive"):
        net = SuperNet.from_flat(load_arrays(cfg.supernet_checkpoint))
        spec = derive_architecture(net)
    path = out / "derived.arch"
    write_spec(spec, path)
    return path


def cmd_eval(cfg: PipelineConfig) -> dict:
    """Metric of a saved model on the test split, or of a saved predictions file.

    A predictions file holds ``pred`` (labels, masks or logits) and ``true``
    arrays in the checkpoint container.
    """
    cfg.validate()
    out = _out(cfg)
    num_classes = NUM_CLASSES[cfg.task]
    if cfg.eval_predictions:
        arrays = load_arrays(cfg.eval_predictions)
        if "pred" not in arrays or "true" not in arrays:
            raise ConfigError("predictions file needs 'pred' and 'true' entries")
        pred, true = arrays["pred"], arrays["true"].astype(np.int64)
        if pred.ndim == true.ndim + 1:
            pred = pred.argmax(axis=1)
        pred = pred.astype(np.int64)
        if cfg.task == CLASSIFICATION:
            metric = float(np.mean(pred == true))
        else:
            metric = miou(pred, true, num_classes)
        source = cfg.eval_predictions
    else:
        if not (cfg.eval_checkpoint and cfg.eval_arch):
            raise ConfigError("eval needs eval_predictions, or eval_checkpoint with eval_arch")
        spec = read_spec(cfg.eval_arch)
        params = load_checkpoint(cfg.eval_checkpoint)
        validate(spec, params)
        _, test_data = target_data(replace(cfg, task=spec.head.task))
        with phase("evaluate"):
            metric = evaluate(spec, params, test_data)
        source = cfg.eval_checkpoint
    result = {"task": cfg.task, "metric_name": "accuracy" if cfg.task == CLASSIFICATION else "miou",
              "metric": metric, "source": str(source)}
    (out / "eval.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return result


__all__ = [
    "AblateConfig",
    "AblationRow",
    "ConfigError",
    "PhaseError",
    "PipelineConfig",
    "PretrainConfig",
    "RunReport",
    "cmd_ablate",
    "cmd_adapt",
    "cmd_derive",
    "cmd_eval",
    "cmd_pretrain_seed",
    "cmd_remap",
    "config_from_dict",
    "load_config",
    "with_seed",
]
