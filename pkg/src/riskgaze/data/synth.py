"""
Deterministic synthetic cohorts.

Each subject's landmarks come from a rotating, scaling 3D face model
projected with the same weak-perspective convention the pose fit inverts.
Eyelids are rebuilt around the projected eye corners so that the eye
aspect ratio equals `open_ratio * openness(t)`; blinks are triangular dips
in openness. Gaze is a piecewise-constant saccade track around a mean pitch.

In the "strong" preset the High level blinks
less often and more slowly, moves the head less and more slowly, scans less
and looks further down than the Low level.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from scipy.spatial.transform import Rotation

from ..core.config import FaceModelConfig
from ..core.errors import InvalidSpec
from ..core.models import N_LANDMARKS, RISK_ORDER, EyeIndexMap, LandmarkFrame, Recording, RiskLabel
from ..core.signals import EULER_SEQ
from .ingest import serialize_recording, write_manifest

logger = logging.getLogger(__name__)

BASE_SCALE = 1000.0                 # px per model unit at the reference distance
IMAGE_CENTER = (320.0, 240.0)
OPEN_RATIO = 0.3                    # eye aspect ratio of an open eye
BLINK_DEPTH = 0.9


class LevelProfile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    blink_rate_hz: float = Field(ge=0)
    blink_duration_s: float = Field(ge=0)
    scan_rate_hz: float = Field(ge=0)
    head_amplitude: float = Field(ge=0)          # rad
    head_freq_hz: float = Field(ge=0)
    gaze_pitch_mean: float = 0.0                 # rad


STRONG = {
    "Low": LevelProfile(blink_rate_hz=0.40, blink_duration_s=0.25, scan_rate_hz=0.50,
                        head_amplitude=0.15, head_freq_hz=0.12, gaze_pitch_mean=0.10),
    "Medium": LevelProfile(blink_rate_hz=0.25, blink_duration_s=0.30, scan_rate_hz=0.30,
                           head_amplitude=0.09, head_freq_hz=0.07, gaze_pitch_mean=0.0),
    "High": LevelProfile(blink_rate_hz=0.12, blink_duration_s=0.50, scan_rate_hz=0.15,
                         head_amplitude=0.04, head_freq_hz=0.03, gaze_pitch_mean=-0.10),
}


def _toward_medium(p: LevelProfile, keep: float) -> LevelProfile:
    mid = STRONG["Medium"].model_dump()
    return LevelProfile(**{k: mid[k] + keep * (v - mid[k]) for k, v in p.model_dump().items()})


PRESETS: Dict[str, Dict[str, LevelProfile]] = {
    "strong": STRONG,
    "weak": {k: _toward_medium(v, 0.25) for k, v in STRONG.items()},
    "null": {k: LevelProfile(blink_rate_hz=0, blink_duration_s=0, scan_rate_hz=0,
                             head_amplitude=0, head_freq_hz=0, gaze_pitch_mean=0)
             for k in STRONG},
}


class CohortSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    preset: Literal["strong", "weak", "null"] = "strong"
    n_subjects_per_level: List[int] = [4, 4, 2]
    minutes_per_subject: float = Field(16.0, gt=0)
    fps: float = Field(10.0, gt=0)
    effect_profile: Optional[Dict[str, LevelProfile]] = None
    noise_sigma: float = Field(0.5, ge=0)           # px
    subject_jitter: float = Field(0.1, ge=0, lt=1)
    invalid_fraction: float = Field(0.0, ge=0, lt=1)
    include_gaze: bool = True
    format: Literal["csv", "jsonl"] = "csv"
    seed: int = 0

    @field_validator("n_subjects_per_level")
    @classmethod
    def _three_levels(cls, v: List[int]) -> List[int]:
        if len(v) != 3 or any(n < 0 for n in v):
            raise ValueError("n_subjects_per_level needs 3 non-negative counts (Low, Medium, High)")
        return v

    @field_validator("effect_profile")
    @classmethod
    def _known_levels(cls, v):
        if v is not None:
            for k in v:
                RiskLabel.parse(k)
        return v

    def profiles(self) -> Dict[RiskLabel, LevelProfile]:
        base = {RiskLabel.parse(k): p for k, p in PRESETS[self.preset].items()}
        for k, p in (self.effect_profile or {}).items():
            base[RiskLabel.parse(k)] = p
        return base


def cohort_spec(raw: Dict | None = None, **overrides) -> CohortSpec:
    try:
        return CohortSpec.model_validate({**(raw or {}), **overrides})
    except ValidationError as e:
        raise InvalidSpec(str(e)) from e


# -------------------------
# Signal building blocks
# -------------------------

def blink_times(rate_hz: float, duration_s: float, rng: np.random.Generator) -> np.ndarray:
    """Jittered regular schedule: interval = U(0.5, 1.5) / rate."""
    if rate_hz <= 0:
        return np.empty(0)
    period = 1.0 / rate_hz
    times = []
    t = rng.uniform(0.0, period)
    while t < duration_s:
        times.append(t)
        t += period * rng.uniform(0.5, 1.5)
    return np.asarray(times)


def openness(t: np.ndarray, blinks: np.ndarray, duration_s: float) -> np.ndarray:
    out = np.ones_like(t)
    if duration_s <= 0 or blinks.size == 0:
        return out
    half = duration_s / 2.0
    for tb in blinks:
        lo, hi = np.searchsorted(t, [tb - half, tb + half])
        dip = BLINK_DEPTH * np.maximum(0.0, 1.0 - np.abs(t[lo:hi] - tb) / half)
        out[lo:hi] = np.minimum(out[lo:hi], 1.0 - dip)
    return out


def saccade_track(n: int, fps: float, rate_hz: float, spread: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Piecewise-constant fixation targets switching at Poisson times."""
    out = np.zeros(n)
    if rate_hz <= 0 or spread <= 0:
        return out
    t = 0.0
    duration = n / fps
    while t < duration:
        nxt = t + rng.exponential(1.0 / rate_hz)
        out[int(t * fps):int(min(nxt, duration) * fps)] = rng.normal(0.0, spread)
        t = nxt
    return out


def eye_points(p1: np.ndarray, p4: np.ndarray, open_frac: np.ndarray,
               ratio: float = OPEN_RATIO) -> np.ndarray:
    """
    Six eye-contour points p1..p6 per frame, (N, 6, 2), around the corners
    p1 and p4. The eye aspect ratio of the result is ratio * open_frac.
    """
    u = p4 - p1
    w = np.linalg.norm(u, axis=1, keepdims=True)
    n = np.stack([-u[:, 1], u[:, 0]], axis=1) / w
    h = (ratio * open_frac)[:, None] * w
    a = p1 + u / 3.0
    b = p1 + 2.0 * u / 3.0
    return np.stack([p1, a - n * h / 2, b - n * h / 2, p4, b + n * h / 2, a + n * h / 2], axis=1)


def _face_template(model_points: np.ndarray, index_map: EyeIndexMap) -> np.ndarray:
    """68 3D points: the model's 6 pose points, the rest on an ellipse around them."""
    centre = model_points.mean(axis=0)
    ang = np.linspace(0.0, 2.0 * np.pi, N_LANDMARKS, endpoint=False)
    tpl = np.column_stack([centre[0] + 0.07 * np.cos(ang), centre[1] + 0.09 * np.sin(ang),
                           np.full(N_LANDMARKS, centre[2] + 0.02)])
    tpl[list(index_map.pose_points)] = model_points
    return tpl - model_points.mean(axis=0)


# -------------------------
# Subjects
# -------------------------

def _jitter(p: LevelProfile, amount: float, rng: np.random.Generator) -> LevelProfile:
    vals = p.model_dump()
    out = {k: v * (1.0 + amount * rng.uniform(-1.0, 1.0)) for k, v in vals.items()
           if k != "gaze_pitch_mean"}
    out["gaze_pitch_mean"] = vals["gaze_pitch_mean"] + amount * 0.05 * rng.uniform(-1.0, 1.0)
    return LevelProfile(**out)


def generate_subject(subject_id: str, label: RiskLabel, profile: LevelProfile,
                     spec: CohortSpec, seed: int) -> Recording:
    rng = np.random.default_rng(seed)
    index_map = EyeIndexMap()
    model = FaceModelConfig().build()
    p = _jitter(profile, spec.subject_jitter, rng)

    n = int(round(spec.minutes_per_subject * 60.0 * spec.fps))
    t = np.arange(n) / spec.fps
    two_pi = 2.0 * np.pi

    phases = rng.uniform(0.0, two_pi, size=(3, 2))
    weights = (1.0, 1.2, 0.5)           # pitch, yaw, roll
    angles = np.column_stack([
        p.head_amplitude * w * (np.sin(two_pi * p.head_freq_hz * t + ph[0])
                                + 0.5 * np.sin(two_pi * 2.3 * p.head_freq_hz * t + ph[1]))
        for w, ph in zip(weights, phases)
    ])
    scale = BASE_SCALE * (1.0 + 0.5 * p.head_amplitude
                          * np.sin(two_pi * 0.7 * p.head_freq_hz * t + rng.uniform(0, two_pi)))

    R = Rotation.from_euler(EULER_SEQ, angles).as_matrix()               # (n, 3, 3)
    tpl = _face_template(model.points, index_map)
    lm = scale[:, None, None] * np.einsum("fij,kj->fki", R, tpl)[..., :2] + np.asarray(IMAGE_CENTER)

    blinks = blink_times(p.blink_rate_hz, t[-1] + 1.0 / spec.fps if n else 0.0, rng)
    open_frac = openness(t, blinks, p.blink_duration_s)
    for eye in (index_map.left_eye, index_map.right_eye):
        lm[:, list(eye)] = eye_points(lm[:, eye[0]], lm[:, eye[3]], open_frac)

    if spec.noise_sigma > 0:
        lm = lm + rng.normal(0.0, spec.noise_sigma, size=lm.shape)
    lm = np.round(lm, 3)

    gaze = None
    if spec.include_gaze:
        pitch = p.gaze_pitch_mean + saccade_track(n, spec.fps, p.scan_rate_hz, 0.08, rng)
        yaw = saccade_track(n, spec.fps, p.scan_rate_hz, 0.15, rng)
        noise = 0.01 if spec.noise_sigma > 0 else 0.0
        gaze = np.round(np.stack([
            pitch + rng.normal(0.0, noise, n), yaw + rng.normal(0.0, noise, n),
            pitch + rng.normal(0.0, noise, n), yaw + rng.normal(0.0, noise, n),
        ], axis=1), 5)

    invalid = rng.random(n) < spec.invalid_fraction if spec.invalid_fraction > 0 else np.zeros(n, bool)
    frames = [
        LandmarkFrame(
            frame_index=i,
            timestamp_s=round(i / spec.fps, 6),
            landmarks=None if invalid[i] else lm[i],
            gaze_left=(float(gaze[i, 0]), float(gaze[i, 1])) if gaze is not None else None,
            gaze_right=(float(gaze[i, 2]), float(gaze[i, 3])) if gaze is not None else None,
            valid=not invalid[i],
        )
        for i in range(n)
    ]
    return Recording(subject_id=subject_id, risk_label=label, fps=spec.fps, frames=frames)


def _subjects(spec: CohortSpec):
    profiles = spec.profiles()
    out = []
    for label, count in zip(RISK_ORDER, spec.n_subjects_per_level):
        for i in range(count):
            out.append((f"{label.short}{i + 1:02d}", label, profiles[label]))
    return out


def generate_cohort(spec: CohortSpec | Dict, n_jobs: int = 1) -> List[Recording]:
    if not isinstance(spec, CohortSpec):
        spec = cohort_spec(spec)
    subjects = _subjects(spec)
    if not subjects:
        raise InvalidSpec("cohort spec produces no subjects")
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(spec.seed).spawn(len(subjects))]

    recordings = Parallel(n_jobs=n_jobs)(
        delayed(generate_subject)(sid, label, profile, spec, seed)
        for (sid, label, profile), seed in zip(subjects, seeds)
    )
    logger.info("%s preset: %d subjects, %.1f min each at %g fps",
                spec.preset, len(recordings), spec.minutes_per_subject, spec.fps)
    return recordings


def write_cohort(spec: CohortSpec | Dict, out_dir: str | Path, n_jobs: int = 1) -> Path:
    """Write every recording in the ingest format plus `manifest.toml`; returns the manifest path."""
    if not isinstance(spec, CohortSpec):
        spec = cohort_spec(spec)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in generate_cohort(spec, n_jobs):
        name = f"{rec.subject_id}.{spec.format}"
        serialize_recording(rec, out_dir / name, spec.format)
        entries.append({"path": name, "subject_id": rec.subject_id,
                        "risk_label": rec.risk_label.value, "fps": rec.fps})
    manifest = write_manifest(out_dir / "manifest.toml", entries, spec.format)
    logger.info("wrote %d recordings to %s", len(entries), out_dir)
    return manifest
