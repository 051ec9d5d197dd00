"""Command-line tests: exit codes, stage ordering and a reproducible tiny pipeline."""

import json

import pandas as pd
import pytest

from assign_surrogate import __version__
from assign_surrogate.main import run_command

TINY = {
    "network": {"rows": 3, "cols": 3},
    "demand": {"agents": 12, "window": 60},
    "paths": {"k": 2},
    "sampler": {"resolution": 2, "samples": 25},
    "sim": {"horizon": 300},
    "dataset": {"flow_window": 4, "assign_window": 4},
    "model": {"hidden": 4, "residual_channels": 2},
    "train": {"max_epochs": 2, "batch_size": 64},
}

PIPELINE = [
    ["net", "gen"],
    ["demand", "gen"],
    ["paths", "build"],
    ["sample", "grid"],
    ["simulate", "batch"],
    ["dataset", "build"],
    ["train"],
    ["train", "--flow-only"],
    ["eval", "tt"],
    ["eval", "trace"],
    ["eval", "ablation"],
    ["bench", "speed"],
]


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY), encoding="utf-8")
    return path


def run_pipeline(out, config):
    for command in PIPELINE:
        code = run_command(command + ["--out", str(out), "--config", str(config)])
        assert code == 0, f"{' '.join(command)} exited with {code}"


def test_version(capsys):
    assert run_command(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_usage_errors_exit_with_one(tmp_path):
    assert run_command([]) == 1
    assert run_command(["net", "explode"]) == 1
    assert run_command(["net", "gen", "--rows", "three", "--out", str(tmp_path)]) == 1


def test_invalid_parameter_exits_with_one(tmp_path, capsys):
    assert run_command(["net", "gen", "--rows", "0", "--out", str(tmp_path)]) == 1
    assert "Error" in capsys.readouterr().err


def test_stage_needs_its_upstream(tmp_path, capsys):
    assert run_command(["demand", "gen", "--out", str(tmp_path)]) == 1
    assert "missing manifest entry for stage 'net'" in capsys.readouterr().err


def test_completed_stage_is_not_overwritten(tmp_path, tiny_config):
    args = ["--out", str(tmp_path / "exp"), "--config", str(tiny_config)]
    assert run_command(["net", "gen"] + args) == 0
    assert run_command(["net", "gen"] + args) == 1
    assert run_command(["net", "gen", "--force"] + args) == 0


def test_stale_upstream_is_reported(tmp_path, tiny_config, capsys):
    out = tmp_path / "exp"
    assert run_command(["net", "gen", "--out", str(out), "--config", str(tiny_config)]) == 0
    changed = tmp_path / "changed.cfg"
    changed.write_text("network.capacity=0.4\n", encoding="utf-8")
    assert run_command(["demand", "gen", "--out", str(out), "--config", str(changed)]) == 1
    assert "stale" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert run_command(["net", "gen", "--out", str(tmp_path), "--config", str(tmp_path / "none.json")]) == 1


def test_missing_input_file_exits_with_two(tmp_path, tiny_config):
    out = tmp_path / "exp"
    assert run_command(["net", "gen", "--out", str(out), "--config", str(tiny_config)]) == 0
    (out / "edges.csv").unlink()
    assert run_command(["demand", "gen", "--out", str(out), "--config", str(tiny_config)]) == 2


def test_net_gen_writes_manifest(tmp_path, tiny_config):
    out = tmp_path / "exp"
    assert run_command(["net", "gen", "--out", str(out), "--config", str(tiny_config), "--seed", "5"]) == 0
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["tool_version"] == __version__
    assert manifest["seed"] == 5
    assert manifest["stages"]["net"]["outputs"] == ["cells.csv", "edges.csv", "nodes.csv"]
    assert len(pd.read_csv(out / "nodes.csv")) == 9


def test_tiny_pipeline_is_reproducible(tmp_path, tiny_config):
    first, second = tmp_path / "first", tmp_path / "second"
    run_pipeline(first, tiny_config)
    run_pipeline(second, tiny_config)

    partition = json.loads((first / "dataset" / "manifest.json").read_text(encoding="utf-8"))["split"]
    assert [len(partition[name]) for name in ("train", "val", "test")] == [17, 2, 6]

    tt = pd.read_csv(first / "eval" / "tt_report.csv")
    assert len(tt) == 6
    assert "spearman" in tt.columns
    assert (tt["pred_tt_min"] >= 0).all()
    ablation = pd.read_csv(first / "eval" / "ablation.csv")
    assert ablation.loc[ablation["model"] == "flow_only", "tt_variance"].iloc[0] == 0.0
    assert len(pd.read_csv(first / "eval" / "speed.csv")) == 6

    # timing columns differ between runs; everything else must match byte for byte
    stable = ["manifest.json", "config.json", "demand.csv", "choice_sets.txt", "samples.csv",
              "assignments/0.csv", "simulations/3/Q.csv", "simulations/3/vehicles.csv",
              "dataset/manifest.json", "dataset/runs/3/A.csv", "model/params.ckpt", "model_flow_only/params.ckpt",
              "eval/tt_report.csv", "eval/trace_0.csv", "eval/ablation.csv"]
    for name in stable:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name
