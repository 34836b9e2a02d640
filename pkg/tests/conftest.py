import json

import numpy as np
import pytest

from fna.checkpoint import save_checkpoint
from fna.netgraph import CLASSIFICATION, build_seed_network


@pytest.fixture(scope="session")
def untrained_seed_ckpt(tmp_path_factory):
    """A randomly initialized seed network on disk; enough for plumbing tests."""
    path = tmp_path_factory.mktemp("seed") / "seed.fna"
    _, params = build_seed_network(CLASSIFICATION, np.random.default_rng(0))
    save_checkpoint(params, path)
    return str(path)


def tiny_config(seed_ckpt: str, out_dir, **overrides) -> dict:
    """A pipeline config small enough to run end to end in seconds."""
    cfg = {
        "seed_checkpoint": seed_ckpt,
        "out_dir": str(out_dir),
        "bn_recalib_steps": 2,
        "bn_recalib_batch": 4,
        "search": {"total_epochs": 2, "warmup_epochs": 1, "batch_size": 4},
        "finetune": {"steps": 4, "warmup_steps": 1, "batch_size": 4},
        "pretrain": {"steps": 4, "warmup_steps": 1, "batch_size": 4, "check_every": 2},
        "seed_data": {"size": 16, "rng_seed": 1},
        "target_train": {"size": 10, "rng_seed": 2},
        "target_test": {"size": 4, "rng_seed": 3},
        "ablate": {"seeds": [0]},
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key] = {**cfg[key], **value}
        else:
            cfg[key] = value
    return cfg


def write_config(path, cfg: dict) -> str:
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return str(path)


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"ACCEPTANCE {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
