import numpy as np
import pytest

from riskgaze.core.config import config_from_dict
from riskgaze.data.synth import cohort_spec, generate_cohort


@pytest.fixture(autouse=True)
def isolated_dirs(tmp_path, monkeypatch):
    """Keep every run and cache inside the test's tmp dir."""
    monkeypatch.setenv("RISKGAZE_RUNS_DIR", str(tmp_path / "runs"))
    monkeypatch.setenv("RISKGAZE_CACHE_DIR", str(tmp_path / "cache"))
    return tmp_path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_synth(**overrides):
    """Six subjects, 4 minutes at 5 fps: three 120 s segments each."""
    raw = {
        "preset": "strong",
        "n_subjects_per_level": [2, 2, 2],
        "minutes_per_subject": 4.0,
        "fps": 5.0,
        "seed": 3,
    }
    raw.update(overrides)
    return raw


@pytest.fixture
def tiny_cohort():
    return generate_cohort(cohort_spec(tiny_synth()))


@pytest.fixture
def fast_config_dict():
    return {
        "seed": 11,
        "synth": tiny_synth(),
        "select": {"k_folds": 3, "runs": 1},
        "classify": {
            "models": ["svm-linear"],
            "samplings": ["none"],
            "n_trials": 2,
            "cv_splits": 3,
        },
    }


@pytest.fixture
def fast_config(fast_config_dict):
    return config_from_dict(fast_config_dict)
