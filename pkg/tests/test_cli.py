import json

import numpy as np
import pytest

from protoem.cli import main
from protoem.model_io import config_from_tensors, config_tensors, load_model
from protoem.encoder import EncoderConfig, StageConfig
from protoem.pgm import read_pgm

SMALL_CFG = "[stage1]\ndim = 8\nblocks = 1\nK = 6\n[stage2]\ndim = 8\nblocks = 1\nK = 3\n[train]\nmax_steps = 4\ncount = 10\n"


def test_help_documents_every_subcommand(capsys):
    assert main(["--help"]) == 0
    out = capsys.readouterr().out
    for cmd in ("verify", "gen-data", "train", "eval", "bench", "export-assignments"):
        assert cmd in out
        assert main([cmd, "--help"]) == 0


@pytest.mark.parametrize("argv", [
    [], ["frobnicate"], ["train", "--task", "flow"], ["verify", "--suite", "nope"],
    ["gen-data", "--task", "flow", "--count", "2", "--out", "x", "--colour", "red"],
])
def test_usage_errors_exit_2(argv):
    assert main(argv) == 2


def test_verify_suite(capsys):
    assert main(["verify", "--suite", "sync"]) == 0
    out = capsys.readouterr().out
    assert "mask one-hot" in out and "FAIL" not in out


def test_train_eval_export(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text(SMALL_CFG)
    data = tmp_path / "data"
    assert main(["gen-data", "--task", "depth", "--count", "10", "--seed", "2", "--out", str(data)]) == 0
    ck, rep = tmp_path / "m.pfkt", tmp_path / "train.csv"
    assert main(["train", "--task", "depth", "--config", str(cfg), "--data", str(data),
                 "--out-checkpoint", str(ck), "--report", str(rep)]) == 0
    summary = json.loads(rep.read_text().splitlines()[-1][2:])
    assert summary["steps"] == 4
    ev = tmp_path / "eval.csv"
    assert main(["eval", "--checkpoint", str(ck), "--data", str(data), "--report", str(ev)]) == 0
    assert float(ev.read_text().splitlines()[1].split(",")[1]) == summary["final_metric"]
    out = tmp_path / "maps"
    assert main(["export-assignments", "--checkpoint", str(ck), "--image", str(data / "sample_00000.pfkt"),
                 "--out-dir", str(out)]) == 0
    assert len(list(out.glob("proto_*.pgm"))) == 6
    assert read_pgm(out / "argmax.pgm").shape == (8, 8)
    assert main(["export-assignments", "--checkpoint", str(ck), "--image", str(data / "sample_00000.pfkt"),
                 "--out-dir", str(out), "--stage", "3"]) == 2


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[train]\nlearning_rate = 1\n")
    assert main(["train", "--task", "flow", "--config", str(cfg), "--out-checkpoint", str(tmp_path / "m"),
                 "--report", str(tmp_path / "r")]) == 2


def test_proto_seed_env(tmp_path, monkeypatch):
    monkeypatch.setenv("PROTO_SEED", "7")
    assert main(["gen-data", "--task", "flow", "--count", "1", "--out", str(tmp_path / "a")]) == 0
    assert main(["gen-data", "--task", "flow", "--count", "1", "--seed", "7", "--out", str(tmp_path / "b")]) == 0
    assert main(["gen-data", "--task", "flow", "--count", "1", "--seed", "8", "--out", str(tmp_path / "c")]) == 0
    a, b, c = (tmp_path / d / "sample_00000.pfkt" for d in "abc")
    assert a.read_bytes() == b.read_bytes() != c.read_bytes()
    monkeypatch.setenv("PROTO_SEED", "x")
    assert main(["gen-data", "--task", "flow", "--count", "1", "--out", str(tmp_path / "d")]) == 2


def test_missing_checkpoint_is_runtime_error(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.pfkt"), "--report", str(tmp_path / "r")]) == 1


def test_config_tensors_roundtrip():
    cfg = EncoderConfig(head="depth", fusion="bilinear", similarity="cosine", seed=9,
                        stages=[StageConfig(4, 8, 1, 6, 2)])
    assert config_from_tensors(config_tensors(cfg)) == cfg


def test_bench_cli(tmp_path, capsys):
    out = tmp_path / "b.csv"
    assert main(["bench", "--sweep", "64,256", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "T,K,N,D,proto_macs,self_macs,proto_ns,self_ns"
    assert main(["bench", "--sweep", "16,x", "--out", str(out)]) == 2
    assert main(["bench", "--sweep", "15", "--out", str(out)]) == 2
