"""Tests for runtime settings, experiment configs and the run manifest."""

import json

import pytest

from assign_surrogate.config import (Config, ExperimentConfig, flatten, get_config, load_config_file,
                                     load_experiment_config)
from assign_surrogate.errors import DatasetError, StageError, ValidationError
from assign_surrogate.main import STAGES, stage_digest
from assign_surrogate.manifest import RunManifest, combine_digests


@pytest.fixture
def clean_env(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    for name in ("ASSIGN_SURROGATE_WORKERS", "ASSIGN_SURROGATE_OUTPUT_DIR", "ASSIGN_SURROGATE_DEBUG"):
        # set first so teardown also undoes values loaded from .env files
        monkeypatch.setenv(name, "")
        monkeypatch.delenv(name)
    return tmp_path


# -- runtime settings -------------------------------------------------------

def test_runtime_defaults(clean_env):
    config = get_config()
    assert config.workers == 1
    assert config.default_output_dir == "./experiments"
    assert config.debug is False


def test_runtime_settings_from_environment(clean_env, monkeypatch):
    monkeypatch.setenv("ASSIGN_SURROGATE_WORKERS", "4")
    monkeypatch.setenv("ASSIGN_SURROGATE_DEBUG", "True")
    config = Config()
    assert config.workers == 4
    assert config.debug is True
    assert config.get("workers") == 4
    assert config.get("missing", "x") == "x"


def test_runtime_settings_from_env_file(clean_env):
    (clean_env / "lab.env").write_text("ASSIGN_SURROGATE_OUTPUT_DIR=/tmp/runs\n", encoding="utf-8")
    config = Config(str(clean_env / "lab.env"))
    assert config.default_output_dir == "/tmp/runs"


def test_runtime_workers_must_be_an_integer(clean_env, monkeypatch):
    monkeypatch.setenv("ASSIGN_SURROGATE_WORKERS", "many")
    with pytest.raises(ValidationError, match="ASSIGN_SURROGATE_WORKERS"):
        Config()


# -- experiment config ------------------------------------------------------

def test_defaults():
    cfg = ExperimentConfig()
    assert (cfg.network.rows, cfg.network.cols) == (5, 5)
    assert cfg.demand.agents == 200
    assert cfg.paths.k == 4
    assert cfg.sim.horizon == 1500.0
    assert cfg.train.batch_size == 128
    assert cfg.model.dilations == (1, 2)


def test_update_coerces_strings():
    cfg = ExperimentConfig().update({"sim.horizon": "600", "network.rows": "3", "model.dilations": "1,2,4",
                                     "seed": "7", "model.fusion": "concat"})
    assert cfg.sim.horizon == 600.0
    assert cfg.network.rows == 3
    assert cfg.model.dilations == (1, 2, 4)
    assert cfg.seed == 7
    assert cfg.model.fusion == "concat"


@pytest.mark.parametrize("overrides", [{"nope.rows": 1}, {"network.depth": 1}, {"network.rows": "2.5"},
                                       {"sim.horizon": "soon"}])
def test_update_rejects_bad_keys_and_values(overrides):
    with pytest.raises(ValidationError):
        ExperimentConfig().update(overrides)


def test_update_runs_section_validation():
    with pytest.raises(ValidationError):
        ExperimentConfig().update({"sim.horizon": 105})


def test_dict_round_trip(tmp_path):
    cfg = ExperimentConfig(seed=3).update({"train.max_epochs": 5, "dataset.marking": "expected"})
    cfg.save(tmp_path / "config.json")
    assert ExperimentConfig.from_dict(json.loads((tmp_path / "config.json").read_text())) == cfg


def test_flatten():
    assert flatten({"seed": 1, "sim": {"horizon": 10}}) == {"seed": 1, "sim.horizon": 10}


def test_load_key_value_file(tmp_path):
    path = tmp_path / "lab.cfg"
    path.write_text("# tiny run\nnetwork.rows=3\nsim.horizon=300\n", encoding="utf-8")
    assert load_config_file(path) == {"network.rows": "3", "sim.horizon": "300"}


def test_load_json_file_must_hold_an_object(tmp_path):
    (tmp_path / "bad.json").write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ValidationError):
        load_config_file(tmp_path / "bad.json")
    with pytest.raises(ValidationError):
        load_config_file(tmp_path / "missing.json")


def test_config_layers_apply_in_order(tmp_path):
    ExperimentConfig().update({"network.rows": 4, "network.cols": 4}).save(tmp_path / "config.json")
    (tmp_path / "extra.json").write_text(json.dumps({"network": {"cols": 6}}), encoding="utf-8")
    cfg = load_experiment_config(tmp_path, tmp_path / "extra.json", {"seed": 9})
    assert (cfg.network.rows, cfg.network.cols, cfg.seed) == (4, 6, 9)


def test_section_digest_tracks_only_named_sections():
    base = ExperimentConfig()
    changed = base.update({"train.max_epochs": 3})
    assert base.section_digest("network") == changed.section_digest("network")
    assert base.section_digest("train") != changed.section_digest("train")
    assert base.section_digest("network") != base.update({"seed": 1}).section_digest("network")


def test_stage_digest_follows_upstream_changes():
    base = ExperimentConfig()
    changed = base.update({"demand.agents": 50})
    assert stage_digest("net", base) == stage_digest("net", changed)
    for stage in ("demand", "paths", "simulate", "dataset", "train", "eval_ablation"):
        assert stage_digest(stage, base) != stage_digest(stage, changed)
    assert set(STAGES["eval_ablation"].upstream) == {"train", "train_flow_only"}


# -- manifest ---------------------------------------------------------------

def test_manifest_records_and_reloads(tmp_path):
    manifest = RunManifest(tmp_path)
    manifest.record("net", "abc", {}, ["nodes.csv", "edges.csv"], seed=2)
    reloaded = RunManifest(tmp_path)
    assert reloaded.seed == 2
    assert reloaded.entry("net")["outputs"] == ["edges.csv", "nodes.csv"]
    reloaded.require("net", "abc", "net gen")


def test_manifest_missing_and_stale_stages(tmp_path):
    manifest = RunManifest(tmp_path)
    with pytest.raises(StageError, match="missing manifest entry for stage 'net'"):
        manifest.require("net", "abc", "net gen")
    manifest.record("net", "abc", {}, [], seed=0)
    with pytest.raises(StageError, match="stale"):
        manifest.require("net", "def", "net gen")


def test_manifest_refuses_overwrite_without_force(tmp_path):
    manifest = RunManifest(tmp_path)
    manifest.record("net", "abc", {}, [], seed=0)
    with pytest.raises(StageError, match="--force"):
        manifest.check_overwrite("net", force=False)
    manifest.check_overwrite("net", force=True)
    manifest.check_overwrite("demand", force=False)


def test_corrupt_manifest(tmp_path):
    (tmp_path / "manifest.json").write_text("{not json", encoding="utf-8")
    with pytest.raises(DatasetError):
        RunManifest(tmp_path)


def test_combine_digests_depends_on_order():
    assert combine_digests("a", ["b", "c"]) != combine_digests("a", ["c", "b"])
    assert combine_digests("a", []) == combine_digests("a", [])
