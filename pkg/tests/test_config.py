from pathlib import Path

import numpy as np
import pytest

from riskgaze.core.config import (
    FaceModelConfig,
    PipelineConfig,
    SignalsConfig,
    config_from_dict,
    config_hash,
    load_config,
    log_level,
    section_hash,
)
from riskgaze.core.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_defaults():
    cfg = config_from_dict({})
    assert cfg.schema_version == 1
    assert cfg.postproc.window == 7
    assert (cfg.postproc.window_s, cfg.postproc.hop_s) == (120.0, 60.0)
    assert cfg.select.methods == ["f_score", "mutual_info", "chi2", "relieff", "mrmr", "variance_ratio"]
    assert cfg.classify.models == ["mlp_1hidden", "svm_linear", "svm_rbf"]
    assert cfg.report.representative_tolerance == 0.03


@pytest.mark.parametrize("raw", [
    {"colour": "blue"},
    {"postproc": {"windw": 7}},
    {"schema_version": 2},
    {"postproc": {"window": 8}},
    {"postproc": {"min_valid_fraction": 1.5}},
    {"classify": {"models": ["random-forest"]}},
    {"ingest": {"format": "parquet"}},
])
def test_invalid_config(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_aliases_are_canonicalised():
    cfg = config_from_dict({"classify": {"models": ["mlp", "svm-rbf"], "samplings": ["over", "under"]}})
    assert cfg.classify.models == ["mlp_1hidden", "svm_rbf"]
    assert cfg.classify.samplings == ["oversample", "undersample"]


def test_env_overrides_paths(isolated_dirs):
    cfg = config_from_dict({"paths": {"runs_dir": "elsewhere"}})
    assert cfg.paths.runs_dir == str(isolated_dirs / "runs")
    assert cfg.paths.cache_dir == str(isolated_dirs / "cache")


def test_log_level(monkeypatch):
    monkeypatch.setenv("RISKGAZE_LOG_LEVEL", "debug")
    assert log_level() == "DEBUG"
    monkeypatch.delenv("RISKGAZE_LOG_LEVEL")
    assert log_level() == "INFO"


def test_load_config_resolves_relative_paths(tmp_path):
    (tmp_path / "conf").mkdir()
    path = tmp_path / "conf" / "run.toml"
    path.write_text(
        'seed = 4\n\n[paths]\nmanifest = "../data/manifest.toml"\n\n'
        '[signals]\nface_model_path = "face.toml"\n',
        encoding="utf-8",
    )
    cfg = load_config(path)
    assert cfg.seed == 4
    assert Path(cfg.paths.manifest).resolve() == (tmp_path / "data" / "manifest.toml").resolve()
    assert Path(cfg.signals.face_model_path) == (tmp_path / "conf").resolve() / "face.toml"


def test_load_config_json(tmp_path):
    path = tmp_path / "run.json"
    path.write_text('{"seed": 9, "stats": {"alpha": 0.01}}', encoding="utf-8")
    cfg = load_config(path)
    assert (cfg.seed, cfg.stats.alpha) == (9, 0.01)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = = 3\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_shipped_configs_load():
    cfg = load_config(CONFIGS / "demo.toml")
    assert cfg.synth["preset"] == "strong"
    assert cfg.classify.models == ["mlp_1hidden", "svm_linear", "svm_rbf"]
    assert Path(cfg.signals.face_model_path).is_file()


def test_face_model_file_matches_defaults():
    from_file = SignalsConfig(face_model_path=str(CONFIGS / "face_model.toml")).build_face_model()
    default = FaceModelConfig().build()
    np.testing.assert_array_equal(from_file.points, default.points)
    assert from_file.interocular_width == default.interocular_width
    assert from_file.focal_length_px == default.focal_length_px


def test_config_hash_tracks_content():
    a = config_from_dict({"seed": 1})
    b = config_from_dict({"seed": 1})
    c = config_from_dict({"seed": 2})
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)
    assert len(config_hash(a)) == 64


def test_section_hash_chains_upstream():
    cfg = PipelineConfig()
    base = section_hash(cfg.postproc)
    assert section_hash(cfg.postproc) == base
    assert section_hash(cfg.postproc, "abc") != base
    assert section_hash({"window": 7}) != section_hash({"window": 9})
