import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskgaze.core.config import FaceModelConfig
from riskgaze.core.errors import DegenerateConfiguration, DegenerateEye, NonPositiveScale
from riskgaze.core.models import EyeIndexMap, FaceModel3D, LandmarkFrame, QualityReport, Recording
from riskgaze.core.signals import (
    RAW_CHANNELS,
    apparent_scale,
    compute_ear,
    fit_head_pose,
    fit_head_rotation,
    frame_signals,
    head_distance,
    project_points,
    recording_signals,
    signals_to_frame,
)
from riskgaze.data.synth import cohort_spec, generate_cohort

OPEN_EYE = np.array([[0, 0], [1, 1], [3, 1], [4, 0], [3, -1], [1, -1]], dtype=float)


@pytest.fixture
def face_model():
    return FaceModelConfig().build()


def null_recording(**overrides):
    raw = {"preset": "null", "n_subjects_per_level": [1, 0, 0], "minutes_per_subject": 0.5,
           "fps": 10.0, "noise_sigma": 0.0, "seed": 5}
    raw.update(overrides)
    return generate_cohort(cohort_spec(raw))[0]


# -------------------------
# Eye aspect ratio
# -------------------------

def test_ear_open_eye():
    assert compute_ear(OPEN_EYE) == pytest.approx(0.5)


def test_ear_closed_eye_is_zero():
    closed = OPEN_EYE.copy()
    closed[[1, 5]] = [1, 0]
    closed[[2, 4]] = [3, 0]
    assert compute_ear(closed) == 0.0


def test_ear_coincident_corners():
    eye = OPEN_EYE.copy()
    eye[3] = eye[0]
    with pytest.raises(DegenerateEye):
        compute_ear(eye)


@settings(max_examples=1000, deadline=None)
@given(
    angle=st.floats(-math.pi, math.pi),
    scale=st.floats(0.01, 100.0),
    tx=st.floats(-1000.0, 1000.0),
    ty=st.floats(-1000.0, 1000.0),
)
def test_ear_similarity_invariant(angle, scale, tx, ty):
    c, s = math.cos(angle), math.sin(angle)
    R = np.array([[c, -s], [s, c]])
    moved = scale * OPEN_EYE @ R.T + np.array([tx, ty])
    assert compute_ear(moved) == pytest.approx(compute_ear(OPEN_EYE), abs=1e-9)


# -------------------------
# Head pose
# -------------------------

def test_identity_pose(face_model):
    pts = project_points(face_model, 0.0, 0.0, 0.0, 1.0)
    pitch, yaw, roll, scale = fit_head_pose(pts, face_model)
    assert (pitch, yaw, roll, scale) == pytest.approx((0.0, 0.0, 0.0, 1.0), abs=1e-9)


def test_known_rotation_recovered(face_model):
    pts = project_points(face_model, 0.2, -0.3, 0.1, 850.0, (320.0, 240.0))
    pitch, yaw, roll, scale = fit_head_pose(pts, face_model)
    assert (pitch, yaw, roll) == pytest.approx((0.2, -0.3, 0.1), abs=1e-6)
    assert scale == pytest.approx(850.0)


LIMIT = math.radians(60)


@settings(max_examples=1000, deadline=None)
@given(
    pitch=st.floats(-LIMIT, LIMIT),
    yaw=st.floats(-LIMIT, LIMIT),
    roll=st.floats(-LIMIT, LIMIT),
    scale=st.floats(50.0, 2000.0),
)
def test_pose_round_trip(pitch, yaw, roll, scale):
    model = FaceModelConfig().build()
    pts = project_points(model, pitch, yaw, roll, scale, (100.0, -50.0))
    got = fit_head_pose(pts, model)
    assert got[:3] == pytest.approx((pitch, yaw, roll), abs=1e-6)
    assert np.linalg.det(fit_head_rotation(pts, model)) == pytest.approx(1.0, abs=1e-9)


def test_collinear_points_rejected(face_model):
    line = np.column_stack([np.arange(6.0), 2.0 * np.arange(6.0)])
    with pytest.raises(DegenerateConfiguration):
        fit_head_pose(line, face_model)


def test_face_model_rejects_collinear_points():
    with pytest.raises(DegenerateConfiguration):
        FaceModel3D(points=[[i, 0, 0] for i in range(6)], interocular_width=0.1, focal_length_px=500)


# -------------------------
# Head distance
# -------------------------

def test_head_distance_pinhole():
    model = FaceModelConfig(interocular_width=0.1, focal_length_px=500.0).build()
    scale = apparent_scale(100.0, model)
    assert head_distance(scale, model) == pytest.approx(0.5)
    assert head_distance(2 * scale, model) == pytest.approx(0.25)


def test_head_distance_zero_scale(face_model):
    with pytest.raises(NonPositiveScale):
        head_distance(0.0, face_model)


# -------------------------
# Frames and recordings
# -------------------------

def test_frontal_synthetic_face():
    rec = null_recording()
    sig = frame_signals(rec.frames[0], EyeIndexMap(), FaceModelConfig().build())
    assert sig.ear_left > 0 and sig.ear_right > 0
    assert sig.ear_left == pytest.approx(0.3, abs=1e-3)
    assert (sig.head_pitch, sig.head_yaw, sig.head_roll) == pytest.approx((0, 0, 0), abs=1e-4)
    assert sig.head_distance == pytest.approx(0.6, abs=1e-4)


def test_invalid_frame_emits_nothing(face_model):
    frame = LandmarkFrame(frame_index=0, timestamp_s=0.0, landmarks=None, valid=False)
    assert frame_signals(frame, EyeIndexMap(), face_model) is None


def test_degenerate_eye_frame_downgraded(face_model):
    rec = null_recording()
    lm = rec.frames[3].landmarks.copy()
    lm[39] = lm[36]
    rec.frames[3] = LandmarkFrame(frame_index=3, timestamp_s=0.3, landmarks=lm)

    quality = QualityReport()
    assert frame_signals(rec.frames[3], EyeIndexMap(), face_model, quality, rec.subject_id) is None
    assert quality.get(rec.subject_id, "degenerate_eye") == 1

    quality = QualityReport()
    raw = recording_signals(rec, EyeIndexMap(), face_model, quality)
    assert not raw["ear_left"].valid_mask[3]
    assert not raw["head_yaw"].valid_mask[3]
    assert raw["ear_left"].valid_mask.sum() == rec.n_frames - 1
    assert quality.get(rec.subject_id, "degenerate_eye") == 1


def test_recording_signals_counts_invalid_frames(face_model):
    rec = null_recording(invalid_fraction=0.2, noise_sigma=0.5)
    n_invalid = sum(not f.valid for f in rec.frames)
    assert n_invalid > 0

    quality = QualityReport()
    raw = recording_signals(rec, EyeIndexMap(), face_model, quality)
    assert quality.get(rec.subject_id, "invalid_frames") == n_invalid
    assert set(raw) == set(RAW_CHANNELS)
    for ch in raw.values():
        assert len(ch) == rec.n_frames
        assert np.isnan(ch.values[~ch.valid_mask]).all()


def test_recording_signals_matches_frame_signals(face_model):
    rec = generate_cohort(cohort_spec({"n_subjects_per_level": [0, 1, 0], "minutes_per_subject": 0.2,
                                       "seed": 9}))[0]
    raw = recording_signals(rec, EyeIndexMap(), face_model)
    for i in (0, 17, 55):
        one = frame_signals(rec.frames[i], EyeIndexMap(), face_model)
        assert raw["ear_left"].values[i] == pytest.approx(one.ear_left, abs=1e-12)
        assert raw["head_yaw"].values[i] == pytest.approx(one.head_yaw, abs=1e-12)
        assert raw["head_distance"].values[i] == pytest.approx(one.head_distance, abs=1e-12)


def test_no_gaze_channels_without_gaze(face_model):
    rec = null_recording(include_gaze=False)
    raw = recording_signals(rec, EyeIndexMap(), face_model)
    assert "gazeL_pitch" not in raw
    assert "ear_right" in raw


def test_signals_to_frame_keeps_usable_frames(face_model):
    rec = null_recording(invalid_fraction=0.3, noise_sigma=0.5)
    raw = recording_signals(rec, EyeIndexMap(), face_model)
    df = signals_to_frame(rec, raw)
    assert len(df) == int(raw["ear_left"].valid_mask.sum())
    assert list(df.columns) == ["frame_index", "timestamp_s", *RAW_CHANNELS, "gimbal_adjacent"]
    assert not df["gimbal_adjacent"].any()
    assert df[list(RAW_CHANNELS)].notna().all().all()


def test_gimbal_adjacent_is_flagged_not_dropped(face_model):
    pts = project_points(face_model, 0.0, math.radians(85), 0.0, 1000.0, (320.0, 240.0))
    lm = np.zeros((68, 2))
    lm[:] = pts.mean(axis=0)
    idx = EyeIndexMap()
    lm[list(idx.pose_points)] = pts
    # eyes built around the projected corners so the EAR stays defined
    for eye in (idx.left_eye, idx.right_eye):
        p1, p4 = lm[eye[0]], lm[eye[3]]
        for k, j in enumerate(eye[1:3], start=1):
            lm[j] = p1 + (p4 - p1) * k / 3 + [0, -2]
        for k, j in zip((2, 1), eye[4:]):
            lm[j] = p1 + (p4 - p1) * k / 3 + [0, 2]
    rec = Recording("S1", "Low", 10.0, [LandmarkFrame(0, 0.0, lm)])

    quality = QualityReport()
    raw = recording_signals(rec, idx, face_model, quality)
    assert raw["head_yaw"].valid_mask[0]
    assert quality.get("S1", "gimbal_adjacent") == 1
    assert bool(signals_to_frame(rec, raw)["gimbal_adjacent"].iat[0])
