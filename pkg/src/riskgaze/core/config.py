"""
Pipeline configuration.

One pydantic model tree, every level `extra="forbid"` so a typo in a TOML
key is an error instead of a silently ignored setting. `.env` overrides
for paths and log level are applied on load.
"""

from __future__ import annotations

import hashlib
import json
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError
from .models import EyeIndexMap, FaceModel3D

SCHEMA_VERSION = 1

MODEL_ALIASES = {
    "mlp": "mlp_1hidden",
    "mlp_1hidden": "mlp_1hidden",
    "svm-linear": "svm_linear",
    "svm_linear": "svm_linear",
    "svm-rbf": "svm_rbf",
    "svm_rbf": "svm_rbf",
}
SAMPLING_ALIASES = {
    "none": "none",
    "over": "oversample",
    "oversample": "oversample",
    "under": "undersample",
    "undersample": "undersample",
}

DEFAULT_FACE_POINTS = [
    [-0.045, -0.030, 0.020],   # 36 left eye outer corner (image left)
    [-0.015, -0.030, 0.010],   # 39 left eye inner corner
    [0.015, -0.030, 0.010],    # 42 right eye inner corner
    [0.045, -0.030, 0.020],    # 45 right eye outer corner
    [-0.025, 0.040, 0.012],    # 48 mouth left corner
    [0.025, 0.040, 0.012],     # 54 mouth right corner
]


def canonical_model(name: str) -> str:
    try:
        return MODEL_ALIASES[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; expected one of {sorted(MODEL_ALIASES)}")


def canonical_sampling(name: str) -> str:
    try:
        return SAMPLING_ALIASES[name]
    except KeyError:
        raise ConfigError(
            f"unknown sampling {name!r}; expected one of {sorted(SAMPLING_ALIASES)}")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PathsConfig(_Section):
    manifest: Optional[str] = None
    runs_dir: str = "runs"
    cache_dir: Optional[str] = "runs/.cache"


class IndexMapConfig(_Section):
    left_eye: List[int] = [36, 37, 38, 39, 40, 41]
    right_eye: List[int] = [42, 43, 44, 45, 46, 47]
    eye_corners: List[int] = [36, 39, 42, 45]
    mouth_corners: List[int] = [48, 54]

    def build(self) -> EyeIndexMap:
        return EyeIndexMap(
            left_eye=tuple(self.left_eye),
            right_eye=tuple(self.right_eye),
            eye_corners=tuple(self.eye_corners),
            mouth_corners=tuple(self.mouth_corners),
        )


class IngestConfig(_Section):
    format: Literal["csv", "jsonl"] = "csv"
    index_map: IndexMapConfig = Field(default_factory=IndexMapConfig)
    n_jobs: int = 1


class FaceModelConfig(_Section):
    points: List[List[float]] = Field(default_factory=lambda: [list(p) for p in DEFAULT_FACE_POINTS])
    interocular_width: float = 0.09
    focal_length_px: float = 600.0

    def build(self) -> FaceModel3D:
        return FaceModel3D(
            points=self.points,
            interocular_width=self.interocular_width,
            focal_length_px=self.focal_length_px,
        )


class SignalsConfig(_Section):
    face_model: FaceModelConfig = Field(default_factory=FaceModelConfig)
    face_model_path: Optional[str] = None
    gimbal_limit_deg: float = 80.0

    def build_face_model(self, base_dir: Path | None = None) -> FaceModel3D:
        if self.face_model_path:
            path = Path(self.face_model_path)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            raw = _read_mapping(path)
            return validate_section(FaceModelConfig, raw.get("face_model", raw)).build()
        return self.face_model.build()


class PostprocConfig(_Section):
    window: int = 7
    window_s: float = 120.0
    hop_s: float = 60.0
    min_valid_fraction: float = Field(0.8, ge=0.0, le=1.0)
    smooth_before_merge: bool = True

    @field_validator("window")
    @classmethod
    def _odd_window(cls, v: int) -> int:
        if v < 1 or v % 2 == 0:
            raise ValueError("window must be an odd positive integer")
        return v


class FunctionalsConfig(_Section):
    min_valid_frames: int = 3


class StatsConfig(_Section):
    alpha: float = 0.05
    two_factor_alpha: float = 0.05
    rm_alpha: float = 0.05


class SelectConfig(_Section):
    methods: List[str] = ["f_score", "mutual_info", "chi2", "relieff", "mrmr", "variance_ratio"]
    k_folds: int = 10
    runs: int = 2
    threshold_grid: List[float] = [0.05, 0.10, 0.15, 0.20]
    bts_min: float = 0.5
    m_min: Optional[int] = None
    ji_min: float = 0.4
    top_fraction: float = 0.10
    corr_prune: float = 0.95
    n_bins: int = 10
    relieff_neighbors: int = 10
    n_jobs: int = 1


class SVMConfig(_Section):
    tol: float = 1e-3
    max_iter: int = 100_000
    kkt_check: bool = True


class MLPConfig(_Section):
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 300
    tol: float = 1e-4
    n_iter_no_change: int = 10
    l2: float = 1e-4


class ClassifyConfig(_Section):
    models: List[str] = ["mlp_1hidden", "svm_linear", "svm_rbf"]
    samplings: List[str] = ["none", "oversample", "undersample"]
    n_trials: int = 10
    test_fraction: float = 0.25
    cv_splits: int = 10
    extended_c_grid: bool = False
    gamma_multipliers: List[float] = [0.1, 1.0, 10.0]
    controls: bool = True
    n_jobs: int = 1
    svm: SVMConfig = Field(default_factory=SVMConfig)
    mlp: MLPConfig = Field(default_factory=MLPConfig)

    @field_validator("models")
    @classmethod
    def _models(cls, v: List[str]) -> List[str]:
        return [canonical_model(m) for m in v]

    @field_validator("samplings")
    @classmethod
    def _samplings(cls, v: List[str]) -> List[str]:
        return [canonical_sampling(s) for s in v]


class ReportConfig(_Section):
    representative_tolerance: float = 0.03


class PipelineConfig(_Section):
    schema_version: Literal[1] = SCHEMA_VERSION
    seed: int = 0
    paths: PathsConfig = Field(default_factory=PathsConfig)
    ingest: IngestConfig = Field(default_factory=IngestConfig)
    signals: SignalsConfig = Field(default_factory=SignalsConfig)
    postproc: PostprocConfig = Field(default_factory=PostprocConfig)
    functionals: FunctionalsConfig = Field(default_factory=FunctionalsConfig)
    stats: StatsConfig = Field(default_factory=StatsConfig)
    select: SelectConfig = Field(default_factory=SelectConfig)
    classify: ClassifyConfig = Field(default_factory=ClassifyConfig)
    synth: Optional[Dict[str, Any]] = None
    report: ReportConfig = Field(default_factory=ReportConfig)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _read_mapping(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".json":
        with path.open("r", encoding="utf-8") as f:
            return json.load(f)
    with path.open("rb") as f:
        try:
            return tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e


def validate_section(model, raw: Dict[str, Any]):
    try:
        return model.model_validate(raw)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"invalid config: {problems}") from e


def config_from_dict(raw: Dict[str, Any]) -> PipelineConfig:
    return _apply_env(validate_section(PipelineConfig, raw))


def load_config(path: str | Path) -> PipelineConfig:
    """
    Load a PipelineConfig from TOML/JSON. Relative `paths.manifest` and
    `signals.face_model_path` resolve against the config file's directory.
    """
    path = Path(path)
    cfg = config_from_dict(_read_mapping(path))

    base = path.resolve().parent
    if cfg.paths.manifest and not Path(cfg.paths.manifest).is_absolute():
        cfg.paths.manifest = str(base / cfg.paths.manifest)
    if cfg.signals.face_model_path and not Path(cfg.signals.face_model_path).is_absolute():
        cfg.signals.face_model_path = str(base / cfg.signals.face_model_path)
    return cfg


def _apply_env(cfg: PipelineConfig) -> PipelineConfig:
    load_dotenv()
    runs_dir = os.getenv("RISKGAZE_RUNS_DIR")
    cache_dir = os.getenv("RISKGAZE_CACHE_DIR")
    if runs_dir:
        cfg.paths.runs_dir = runs_dir
    if cache_dir:
        cfg.paths.cache_dir = cache_dir
    return cfg


def config_hash(cfg: PipelineConfig) -> str:
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def section_hash(section: BaseModel | Dict[str, Any], *upstream: str) -> str:
    """Cache key for one stage: its own config section plus upstream keys."""
    payload = section.model_dump(mode="json") if isinstance(section, BaseModel) else section
    canonical = json.dumps({"section": payload, "upstream": list(upstream)},
                           sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def log_level() -> str:
    load_dotenv()
    return os.getenv("RISKGAZE_LOG_LEVEL", "INFO").upper()
