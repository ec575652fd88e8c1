import json

import pytest

from ecg2text.config import EvalConfig, PipelineConfig, config_from_dict, load_config, require_paths
from ecg2text.errors import ConfigError


def write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def test_defaults_round_trip():
    cfg = config_from_dict({})
    assert cfg.train.batch_size == 16 and cfg.layout.layout().dim == 864
    again = config_from_dict(cfg.to_dict())
    assert again.config_hash() == cfg.config_hash()


def test_relative_paths_resolve_against_config_folder(tmp_path):
    (tmp_path / "m.csv").write_text("record_id,path,labels,report\n")
    cfg = load_config(write(tmp_path, {"paths": {"manifest": "m.csv", "out_dir": "o"}}))
    assert cfg.paths.manifest == str((tmp_path / "m.csv").resolve())
    assert cfg.paths.out_dir == str((tmp_path / "o").resolve())
    require_paths(cfg)


def test_overrides(tmp_path):
    cfg = load_config(write(tmp_path, {"seed": 1}), seed=7, out_dir=tmp_path / "x")
    assert cfg.seed == 7 and cfg.train.seed == 7
    assert cfg.paths.out_dir == str((tmp_path / "x").resolve())


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"train": {"seed": 3}},
    {"train": {"epochs": "ten"}},
    {"train": {"dropout": 1.5}},
    {"train": {"ot": {"metric": 3}}},
    {"layout": {"features": ["max", "nope"]}},
    {"preprocess": {"window": 4}},
    {"eval": {"m_max": 2}},
    {"train": {"adam_betas": [0.9]}},
    {"layout": {"z8_centered_on_z7": 1}},
    [],
])
def test_schema_errors(tmp_path, data):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, data))


def test_missing_and_invalid_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")


def test_required_paths(tmp_path):
    with pytest.raises(ConfigError):
        require_paths(config_from_dict({}))
    with pytest.raises(ConfigError):
        require_paths(config_from_dict({"paths": {"manifest": str(tmp_path / "m.csv")}}))
    cfg = config_from_dict({"paths": {"embeddings": str(tmp_path / "e.emb")}})
    with pytest.raises(ConfigError):
        require_paths(cfg, manifest=False)


def test_hash_scope():
    base = config_from_dict({})
    moved = config_from_dict({"paths": {"out_dir": "/elsewhere", "manifest": "/m.csv"}})
    described = config_from_dict({"eval": {"descriptions": {"NORM": "x"}}})
    assert base.config_hash() == moved.config_hash() == described.config_hash()
    other_layout = config_from_dict({"layout": {"samples_per_lead": 42}})
    assert other_layout.config_hash() != base.config_hash()
    assert other_layout.data_hash() != base.data_hash()
    other_train = config_from_dict({"train": {"epochs": 3}})
    assert other_train.data_hash() == base.data_hash()
    assert other_train.config_hash() != base.config_hash()
    assert config_from_dict({"seed": 1}).config_hash() != base.config_hash()


def test_dataclass_construction_validates():
    with pytest.raises(ConfigError):
        PipelineConfig(eval=EvalConfig(m_max=1))


@pytest.mark.parametrize("data", [
    {"preprocess": {"window_n": 4}},
    {"preprocess": {"pre": 0}},
    {"preprocess": {"detect_lead": "V9"}},
    {"layout": {"samples_per_lead": 0}},
    {"layout": {"samples_per_lead": 49}},  # 12 * (49 + 22) is not a multiple of 16
])
def test_values_checked_before_work(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)
