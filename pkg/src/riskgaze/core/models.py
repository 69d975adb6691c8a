from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import (
    DegenerateConfiguration,
    LengthMismatch,
    UnknownRiskLabel,
)

N_LANDMARKS = 68

# Post-processed channel order; the functional vector follows it.
CHANNELS: Tuple[str, ...] = (
    "avg_ear",
    "eye_pitch",
    "eye_yaw",
    "head_distance",
    "head_pitch",
    "head_yaw",
    "head_roll",
)
GAZE_CHANNELS: Tuple[str, ...] = ("eye_pitch", "eye_yaw")

STAT_NAMES: Tuple[str, ...] = (
    "max", "min", "range", "mean", "var", "std", "skew", "kurt", "peaks", "valleys",
)
DERIVATIVE_ORDERS: Tuple[int, ...] = (0, 1, 2)


class RiskLabel(str, Enum):
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"

    @property
    def short(self) -> str:
        return self.value[0]

    @property
    def code(self) -> int:
        return RISK_ORDER.index(self)

    @classmethod
    def parse(cls, raw) -> "RiskLabel":
        if isinstance(raw, RiskLabel):
            return raw
        text = str(raw).strip().lower()
        for label in cls:
            if text in (label.value.lower(), label.short.lower()):
                return label
        raise UnknownRiskLabel(f"unknown risk label {raw!r}")


RISK_ORDER: Tuple[RiskLabel, ...] = (RiskLabel.LOW, RiskLabel.MEDIUM, RiskLabel.HIGH)


# -------------------------
# ingest
# -------------------------

@dataclass(eq=False)
class LandmarkFrame:
    frame_index: int
    timestamp_s: float
    landmarks: Optional[np.ndarray]          # (68, 2) pixels, None when invalid
    gaze_left: Optional[Tuple[float, float]] = None   # (pitch, yaw) rad
    gaze_right: Optional[Tuple[float, float]] = None
    valid: bool = True

    def __eq__(self, other) -> bool:
        if not isinstance(other, LandmarkFrame):
            return NotImplemented
        if (self.frame_index, self.timestamp_s, self.valid) != (
            other.frame_index, other.timestamp_s, other.valid
        ):
            return False
        if self.gaze_left != other.gaze_left or self.gaze_right != other.gaze_right:
            return False
        if self.landmarks is None or other.landmarks is None:
            return self.landmarks is None and other.landmarks is None
        return bool(np.array_equal(self.landmarks, other.landmarks))


@dataclass
class Recording:
    subject_id: str
    risk_label: RiskLabel
    fps: float
    frames: List[LandmarkFrame] = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.fps

    @property
    def has_gaze(self) -> bool:
        return any(f.gaze_left is not None or f.gaze_right is not None for f in self.frames)

    def landmark_array(self) -> np.ndarray:
        """(n_frames, 68, 2) array; invalid frames are all-NaN."""
        out = np.full((self.n_frames, N_LANDMARKS, 2), np.nan)
        for i, f in enumerate(self.frames):
            if f.valid and f.landmarks is not None:
                out[i] = f.landmarks
        return out

    def gaze_array(self, side: str) -> np.ndarray:
        """(n_frames, 2) pitch/yaw for `side` in {"left", "right"}; NaN where absent."""
        out = np.full((self.n_frames, 2), np.nan)
        for i, f in enumerate(self.frames):
            g = f.gaze_left if side == "left" else f.gaze_right
            if f.valid and g is not None:
                out[i] = g
        return out


@dataclass(frozen=True)
class EyeIndexMap:
    left_eye: Tuple[int, ...] = (36, 37, 38, 39, 40, 41)
    right_eye: Tuple[int, ...] = (42, 43, 44, 45, 46, 47)
    eye_corners: Tuple[int, ...] = (36, 39, 42, 45)
    mouth_corners: Tuple[int, ...] = (48, 54)

    def __post_init__(self):
        for name, group, size in (
            ("left_eye", self.left_eye, 6),
            ("right_eye", self.right_eye, 6),
            ("eye_corners", self.eye_corners, 4),
            ("mouth_corners", self.mouth_corners, 2),
        ):
            if len(group) != size:
                raise ValueError(f"{name} needs {size} indices, got {len(group)}")
            if len(set(group)) != size:
                raise ValueError(f"{name} has duplicate indices: {group}")
            if any(not 0 <= i < N_LANDMARKS for i in group):
                raise ValueError(f"{name} indices must lie in [0, 67]: {group}")

    @property
    def pose_points(self) -> Tuple[int, ...]:
        return tuple(self.eye_corners) + tuple(self.mouth_corners)


@dataclass
class CohortLevel:
    n_subjects: int
    minutes: float
    predicted_segments: int


@dataclass
class CohortSummary:
    levels: Dict[RiskLabel, CohortLevel]
    window_s: float
    hop_s: float

    @property
    def total_subjects(self) -> int:
        return sum(lv.n_subjects for lv in self.levels.values())

    @property
    def total_minutes(self) -> float:
        return sum(lv.minutes for lv in self.levels.values())

    @property
    def total_segments(self) -> int:
        return sum(lv.predicted_segments for lv in self.levels.values())

    def to_rows(self) -> List[Dict[str, object]]:
        """Summary rows, one per level plus a total row."""
        rows = [
            {
                "risk_level": label.value,
                "n_subjects": lv.n_subjects,
                "minutes": round(lv.minutes, 2),
                "segments": lv.predicted_segments,
            }
            for label, lv in self.levels.items()
        ]
        rows.append({
            "risk_level": "Total",
            "n_subjects": self.total_subjects,
            "minutes": round(self.total_minutes, 2),
            "segments": self.total_segments,
        })
        return rows


# -------------------------
# signals
# -------------------------

@dataclass(eq=False)
class FaceModel3D:
    points: np.ndarray            # (6, 3): 4 eye corners then 2 mouth corners
    interocular_width: float
    focal_length_px: float
    labels: Tuple[str, ...] = (
        "left_eye_outer", "left_eye_inner", "right_eye_inner",
        "right_eye_outer", "mouth_left", "mouth_right",
    )

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.shape != (6, 3):
            raise DegenerateConfiguration(
                f"face model needs 6 3D points, got shape {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise DegenerateConfiguration("face model points must be finite")
        centered = self.points - self.points.mean(axis=0)
        if np.linalg.matrix_rank(centered, tol=1e-9) < 2:
            raise DegenerateConfiguration("face model points are collinear")
        if not self.interocular_width > 0 or not self.focal_length_px > 0:
            raise DegenerateConfiguration(
                "interocular_width and focal_length_px must be positive")

    @property
    def centered(self) -> np.ndarray:
        return self.points - self.points.mean(axis=0)


@dataclass
class FrameSignals:
    frame_index: int
    timestamp_s: float
    ear_left: float
    ear_right: float
    head_pitch: float
    head_yaw: float
    head_roll: float
    head_distance: float
    gaze_left: Optional[Tuple[float, float]] = None
    gaze_right: Optional[Tuple[float, float]] = None
    gimbal_adjacent: bool = False

    def to_row(self) -> Dict[str, float]:
        gl = self.gaze_left or (math.nan, math.nan)
        gr = self.gaze_right or (math.nan, math.nan)
        return {
            "frame_index": self.frame_index,
            "timestamp_s": self.timestamp_s,
            "ear_left": self.ear_left,
            "ear_right": self.ear_right,
            "head_pitch": self.head_pitch,
            "head_yaw": self.head_yaw,
            "head_roll": self.head_roll,
            "head_distance": self.head_distance,
            "gazeL_pitch": gl[0],
            "gazeL_yaw": gl[1],
            "gazeR_pitch": gr[0],
            "gazeR_yaw": gr[1],
        }


@dataclass
class QualityReport:
    """Per-subject counters of degraded frames / segments / channels."""
    counters: Dict[str, Dict[str, int]] = field(default_factory=dict)

    def bump(self, subject_id: str, key: str, n: int = 1) -> None:
        if n == 0:
            return
        per = self.counters.setdefault(subject_id, {})
        per[key] = per.get(key, 0) + int(n)

    def get(self, subject_id: str, key: str) -> int:
        return self.counters.get(subject_id, {}).get(key, 0)

    def total(self, key: str) -> int:
        return sum(c.get(key, 0) for c in self.counters.values())

    def merge(self, other: "QualityReport") -> None:
        for sid, per in other.counters.items():
            for k, v in per.items():
                self.bump(sid, k, v)


# -------------------------
# postproc
# -------------------------

@dataclass(eq=False)
class ChannelSeries:
    name: str
    values: np.ndarray
    valid_mask: np.ndarray
    fps: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        if self.values.shape != self.valid_mask.shape:
            raise LengthMismatch(
                f"{self.name}: values {self.values.shape} vs mask {self.valid_mask.shape}")

    def __len__(self) -> int:
        return len(self.values)

    def valid_values(self) -> np.ndarray:
        return self.values[self.valid_mask]

    def runs(self) -> List[np.ndarray]:
        """Values of each maximal contiguous valid run, in order."""
        return [self.values[a:b] for a, b in valid_runs(self.valid_mask)]

    def slice(self, start: int, stop: int) -> "ChannelSeries":
        return ChannelSeries(self.name, self.values[start:stop].copy(),
                             self.valid_mask[start:stop].copy(), self.fps)


def valid_runs(mask: np.ndarray) -> List[Tuple[int, int]]:
    """[start, stop) bounds of the True runs of a boolean mask."""
    m = np.concatenate(([False], np.asarray(mask, dtype=bool), [False]))
    edges = np.flatnonzero(np.diff(m.astype(np.int8)))
    return [(int(a), int(b)) for a, b in zip(edges[::2], edges[1::2])]


@dataclass
class Segment:
    subject_id: str
    risk_label: RiskLabel
    segment_index: int
    start_s: float
    end_s: float
    channels: Dict[str, ChannelSeries]
    valid_fraction: float


# -------------------------
# functionals
# -------------------------

@dataclass
class StatBlock:
    max: float
    min: float
    range: float
    mean: float
    var: float
    std: float
    skew: float
    kurt: float
    peaks: float
    valleys: float

    def values(self) -> List[float]:
        return [getattr(self, n) for n in STAT_NAMES]


@dataclass(eq=False)
class SegmentFeatures:
    subject_id: str
    risk_label: RiskLabel
    segment_index: int
    features: np.ndarray
    feature_names: Tuple[str, ...]
    flags: Tuple[str, ...] = ()


def feature_names_for(channels) -> Tuple[str, ...]:
    return tuple(
        f"{ch}-d{order}_{stat}"
        for ch in channels
        for order in DERIVATIVE_ORDERS
        for stat in STAT_NAMES
    )


# -------------------------
# stats
# -------------------------

@dataclass
class PairwiseTest:
    t: float
    p: float
    significant: bool


@dataclass
class FeatureStats:
    feature: str
    anova_F: float
    anova_p: float
    bonferroni_significant: bool
    pairwise: Dict[str, PairwiseTest]      # keys "LH", "MH", "LM"
    direction: str
    direction_tie: bool
    means: Dict[str, float]                # keys "L", "M", "H"
    risk_p: Optional[float] = None
    subject_p: Optional[float] = None
    interaction_p: Optional[float] = None
    subject_free: bool = False
    rm_F: Optional[float] = None
    rm_p: Optional[float] = None
    flags: List[str] = field(default_factory=list)

    @property
    def posthoc_significant(self) -> bool:
        return any(pt.significant for pt in self.pairwise.values())


@dataclass
class StatReport:
    alpha: float
    n_tests: int
    corrected_alpha: float
    rows: List[FeatureStats]
    significant: List[str]
    anova_significant: List[str]
    subject_free: List[str]
    repeated_measures: List[str]

    def row(self, feature: str) -> FeatureStats:
        for r in self.rows:
            if r.feature == feature:
                return r
        raise KeyError(feature)


# -------------------------
# select
# -------------------------

@dataclass(eq=False)
class SelectorScore:
    method: str
    scores: np.ndarray
    ranks: np.ndarray          # 1 = most relevant
    feature_names: Tuple[str, ...]


@dataclass
class SelectionReport:
    feature_names: List[str]
    methods: List[str]
    frequency: Dict[str, Dict[str, float]]      # method -> feature -> top-10% frequency
    jaccard_index: Dict[str, float]             # method -> JI
    bts: Dict[str, float]                       # feature -> mean BTS over stable methods
    bts_by_method: Dict[str, Dict[str, float]]
    mean_rank: Dict[str, float]
    votes: Dict[str, int]
    stable_methods: List[str]
    final_set: List[str]
    cap: int
    pruned: List[str] = field(default_factory=list)


# -------------------------
# classify
# -------------------------

@dataclass(frozen=True)
class ModelSpec:
    kind: str                          # "mlp_1hidden" | "svm_linear" | "svm_rbf"
    sampling: str = "none"             # "none" | "oversample" | "undersample"
    hyper: Tuple[Tuple[str, float], ...] = ()

    @property
    def label(self) -> str:
        return f"{self.kind}/{self.sampling}"


@dataclass
class TrialResult:
    trial_index: int
    balanced_accuracy: float
    mcc: float
    confusion: List[List[int]]
    chosen_hyper: Dict[str, float]


@dataclass
class ExperimentResult:
    spec: ModelSpec
    trials: List[TrialResult]
    avg_accuracy: float
    std_accuracy: float
    avg_mcc: float
    control: str = "none"              # "none" | "shuffled_labels" | "shuffled_features"
    feature_set: str = "all"
