import subprocess
import sys

import numpy as np
import pytest

from conftest import tiny_config, write_config
from fna.checkpoint import save_arrays
from fna.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, run
from fna.netgraph import CLASSIFICATION, build_seed_network
from fna.supernet import derive_architecture, expand_seed


def _parse(out: str) -> dict:
    return dict(line.split("\t", 1) for line in out.strip().splitlines())


def test_remap_seed_spec_gives_identity_checkpoint(untrained_seed_ckpt, tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", tiny_config(untrained_seed_ckpt, tmp_path / "out"))
    assert run(["remap", "--config", cfg, "--strategy", "center"]) == EXIT_OK
    path = _parse(capsys.readouterr().out)["checkpoint"]
    assert open(path, "rb").read() == open(untrained_seed_ckpt, "rb").read()


def test_derive_writes_spec_text(tmp_path, capsys):
    net = expand_seed(build_seed_network(CLASSIFICATION, np.random.default_rng(0)))
    net.stages[0][1].alpha.data[-1] = 1.0
    save_arrays(net.to_flat(), tmp_path / "supernet.fna")
    cfg = write_config(tmp_path / "c.json", {"supernet_checkpoint": str(tmp_path / "supernet.fna"),
                                             "out_dir": str(tmp_path / "out")})
    assert run(["derive", "--config", cfg]) == EXIT_OK
    arch = _parse(capsys.readouterr().out)["arch"]
    assert open(arch).read() == derive_architecture(net).to_text()


def test_eval_perfect_predictions(tmp_path, capsys):
    true = np.random.default_rng(0).integers(0, 4, size=(3, 32, 32))
    save_arrays({"pred": true.astype(np.float32), "true": true.astype(np.float32)}, tmp_path / "p.fna")
    cfg = write_config(tmp_path / "c.json", {"eval_predictions": str(tmp_path / "p.fna"),
                                             "out_dir": str(tmp_path / "out")})
    assert run(["eval", "--config", cfg]) == EXIT_OK
    assert float(_parse(capsys.readouterr().out)["miou"]) == 1.0


def test_adapt_prints_report_keys(untrained_seed_ckpt, tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", tiny_config(untrained_seed_ckpt, tmp_path / "out"))
    assert run(["adapt", "--config", cfg, "--rng-seed", "3"]) == EXIT_OK
    out = capsys.readouterr().out
    rows = _parse(out)
    assert {"mode", "miou", "madds", "arch", "report", "seconds", "figure"} <= set(rows)
    assert out.count("figure\t") == 3


@pytest.mark.parametrize("cfg,code", [
    ({"strategy": "nope"}, EXIT_CONFIG),
    ({"unknown": 1}, EXIT_CONFIG),
    ({"seed_checkpoint": "/does/not/exist"}, EXIT_CONFIG),
    ({"out_dir": "placeholder"}, EXIT_CONFIG),          # adapt without a seed checkpoint
])
def test_config_errors_exit_one(tmp_path, cfg, code, capsys):
    path = write_config(tmp_path / "c.json", cfg)
    assert run(["adapt", "--config", path]) == code
    assert "config error" in capsys.readouterr().err


def test_bad_json_and_bad_checkpoint(tmp_path, capsys):
    (tmp_path / "bad.json").write_text("{not json")
    assert run(["eval", "--config", str(tmp_path / "bad.json")]) == EXIT_CONFIG
    assert run(["eval", "--config", str(tmp_path / "missing.json")]) == EXIT_IO
    (tmp_path / "junk.fna").write_bytes(b"JUNKJUNKJUNK")
    cfg = write_config(tmp_path / "c.json", {"eval_predictions": str(tmp_path / "junk.fna"),
                                             "out_dir": str(tmp_path / "out")})
    assert run(["eval", "--config", cfg]) == EXIT_IO
    capsys.readouterr()


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "fna.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for name in ("pretrain", "adapt", "ablate", "remap", "derive", "eval"):
        assert name in res.stdout
