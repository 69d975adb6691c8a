"""
Low-level per-frame signals: eye aspect ratio, head pose, head distance.

Head pose uses a weak-perspective (scaled orthographic) fit of a 6-point
3D face model (4 eye corners + 2 mouth corners) to the matching 2D
landmarks. Model and image share axes: x right, y down, z away from the
camera, so projecting means keeping (x, y) of s * R @ X.

Euler angles are intrinsic x-y-z: pitch about x, yaw about y, roll about z.
"""

from __future__ import annotations

import logging
import math
import warnings
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from .errors import DegenerateConfiguration, DegenerateEye, NonPositiveScale
from .models import (
    ChannelSeries,
    EyeIndexMap,
    FaceModel3D,
    FrameSignals,
    LandmarkFrame,
    QualityReport,
    Recording,
)

logger = logging.getLogger(__name__)

EYE_EPS = 1e-9
RANK_TOL = 1e-9
EULER_SEQ = "XYZ"


# -------------------------
# Eye aspect ratio
# -------------------------

def compute_ear(eye_points) -> float:
    """
    EAR = (|p2 - p6| + |p3 - p5|) / (2 |p1 - p4|)

    The printed form of this ratio in some write-ups subtracts the two
    vertical distances; that version is identically zero for a vertically
    symmetric eye, so the sum is used.
    """
    p = np.asarray(eye_points, dtype=float)
    if p.shape != (6, 2):
        raise DegenerateEye(f"eye needs 6 2D points, got shape {p.shape}")
    horizontal = np.linalg.norm(p[0] - p[3])
    if not horizontal >= EYE_EPS:
        raise DegenerateEye(f"eye corners coincide (|p1-p4|={horizontal:.3g})")
    vertical = np.linalg.norm(p[1] - p[5]) + np.linalg.norm(p[2] - p[4])
    return float(vertical / (2.0 * horizontal))


def _ear_batch(eyes: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """eyes: (N, 6, 2). Returns (ear, ok) with ear NaN where not ok."""
    horizontal = np.linalg.norm(eyes[:, 0] - eyes[:, 3], axis=1)
    vertical = (np.linalg.norm(eyes[:, 1] - eyes[:, 5], axis=1)
                + np.linalg.norm(eyes[:, 2] - eyes[:, 4], axis=1))
    ok = np.isfinite(vertical) & (horizontal >= EYE_EPS)
    ear = np.full(len(eyes), np.nan)
    ear[ok] = vertical[ok] / (2.0 * horizontal[ok])
    return ear, ok


# -------------------------
# Head pose
# -------------------------

def rotation_matrix(pitch: float, yaw: float, roll: float) -> np.ndarray:
    return Rotation.from_euler(EULER_SEQ, [pitch, yaw, roll]).as_matrix()


def project_points(
    model: FaceModel3D,
    pitch: float,
    yaw: float,
    roll: float,
    scale: float = 1.0,
    translation: Sequence[float] = (0.0, 0.0),
) -> np.ndarray:
    """Weak-perspective projection of the (centred) model points, (6, 2)."""
    R = rotation_matrix(pitch, yaw, roll)
    rotated = model.centered @ R.T
    return scale * rotated[:, :2] + np.asarray(translation, dtype=float)


def _fit_batch(image_points: np.ndarray, model: FaceModel3D):
    """
    image_points: (N, 6, 2). Returns (R, scale, ok):
      R (N, 3, 3) proper rotations, scale (N,), ok (N,) rank check.
    """
    P = image_points - image_points.mean(axis=1, keepdims=True)
    finite = np.all(np.isfinite(P), axis=(1, 2))
    P = np.where(finite[:, None, None], P, 0.0)

    sv = np.linalg.svd(P, compute_uv=False)           # (N, 2)
    ok = finite & (sv[:, 1] > RANK_TOL * np.maximum(sv[:, 0], 1.0))

    # least squares 2x3 projection: P ~= M @ A.T
    M_pinv = np.linalg.pinv(model.centered)            # (3, 6)
    A = np.transpose(M_pinv @ P, (0, 2, 1))            # (N, 2, 3)

    U, S, Vt = np.linalg.svd(A, full_matrices=False)   # (N,2,2) (N,2) (N,2,3)
    rows = U @ Vt                                      # nearest orthonormal rows
    r3 = np.cross(rows[:, 0], rows[:, 1])
    R = np.concatenate([rows, r3[:, None, :]], axis=1)
    scale = S.mean(axis=1)
    return R, scale, ok


def _euler_batch(R: np.ndarray) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*[Gg]imbal.*")
        return Rotation.from_matrix(R).as_euler(EULER_SEQ)


def fit_head_pose(image_points, model: FaceModel3D) -> Tuple[float, float, float, float]:
    """Returns (pitch, yaw, roll, scale) of the weak-perspective fit."""
    pts = np.asarray(image_points, dtype=float)
    if pts.shape != (6, 2) or not np.all(np.isfinite(pts)):
        raise DegenerateConfiguration("pose fit needs 6 finite 2D points")
    R, scale, ok = _fit_batch(pts[None], model)
    if not ok[0]:
        raise DegenerateConfiguration("image points have rank < 2 after centering")
    pitch, yaw, roll = _euler_batch(R)[0]
    return float(pitch), float(yaw), float(roll), float(scale[0])


def fit_head_rotation(image_points, model: FaceModel3D) -> np.ndarray:
    """The 3x3 rotation of the fit (determinant +1)."""
    pts = np.asarray(image_points, dtype=float)
    R, _, ok = _fit_batch(pts[None], model)
    if not ok[0]:
        raise DegenerateConfiguration("image points have rank < 2 after centering")
    return R[0]


def head_distance(scale: float, model: FaceModel3D) -> float:
    """
    Pinhole relation: apparent size = focal * model size / distance, and the
    fitted scale is apparent size per model unit.
    """
    if not (math.isfinite(scale) and scale > 0):
        raise NonPositiveScale(f"scale must be positive, got {scale}")
    return model.focal_length_px / scale


def apparent_scale(interocular_px: float, model: FaceModel3D) -> float:
    return interocular_px / model.interocular_width


# -------------------------
# Frame / recording level
# -------------------------

def frame_signals(
    frame: LandmarkFrame,
    index_map: EyeIndexMap,
    model: FaceModel3D,
    quality: Optional[QualityReport] = None,
    subject_id: str = "",
    gimbal_limit_deg: float = 80.0,
) -> Optional[FrameSignals]:
    """
    All seven signal families for one frame, or None when the frame is
    invalid or degenerates (counted in `quality`).
    """
    if not frame.valid or frame.landmarks is None:
        return None

    lm = np.asarray(frame.landmarks, dtype=float)
    try:
        ear_left = compute_ear(lm[list(index_map.left_eye)])
        ear_right = compute_ear(lm[list(index_map.right_eye)])
    except DegenerateEye as e:
        logger.debug("%s frame %d: %s", subject_id, frame.frame_index, e)
        if quality is not None:
            quality.bump(subject_id, "degenerate_eye")
        return None

    try:
        pitch, yaw, roll, scale = fit_head_pose(lm[list(index_map.pose_points)], model)
        distance = head_distance(scale, model)
    except (DegenerateConfiguration, NonPositiveScale) as e:
        logger.debug("%s frame %d: %s", subject_id, frame.frame_index, e)
        if quality is not None:
            quality.bump(subject_id, "degenerate_pose")
        return None

    gimbal = abs(yaw) > math.radians(gimbal_limit_deg)
    if gimbal and quality is not None:
        quality.bump(subject_id, "gimbal_adjacent")

    return FrameSignals(
        frame_index=frame.frame_index,
        timestamp_s=frame.timestamp_s,
        ear_left=ear_left,
        ear_right=ear_right,
        head_pitch=pitch,
        head_yaw=yaw,
        head_roll=roll,
        head_distance=distance,
        gaze_left=frame.gaze_left,
        gaze_right=frame.gaze_right,
        gimbal_adjacent=gimbal,
    )


RAW_CHANNELS = (
    "ear_left", "ear_right",
    "gazeL_pitch", "gazeL_yaw", "gazeR_pitch", "gazeR_yaw",
    "head_pitch", "head_yaw", "head_roll", "head_distance",
)


def recording_signals(
    recording: Recording,
    index_map: EyeIndexMap,
    model: FaceModel3D,
    quality: Optional[QualityReport] = None,
    gimbal_limit_deg: float = 80.0,
) -> Dict[str, ChannelSeries]:
    """
    Vectorised frame_signals over a whole recording. Returns raw (unsmoothed,
    per-eye) channels keyed by RAW_CHANNELS; a frame that degenerates is
    invalid in every landmark-derived channel.
    """
    sid = recording.subject_id
    lm = recording.landmark_array()                       # NaN for invalid frames
    n = len(lm)
    frame_ok = np.all(np.isfinite(lm), axis=(1, 2))
    if quality is not None:
        quality.bump(sid, "invalid_frames", int(np.count_nonzero(~frame_ok)))

    ear_l, ok_l = _ear_batch(lm[:, list(index_map.left_eye)])
    ear_r, ok_r = _ear_batch(lm[:, list(index_map.right_eye)])
    eye_ok = ok_l & ok_r
    if quality is not None:
        quality.bump(sid, "degenerate_eye", int(np.count_nonzero(frame_ok & ~eye_ok)))

    valid = frame_ok & eye_ok
    R, scale, pose_ok = _fit_batch(lm[:, list(index_map.pose_points)], model)
    pose_ok &= scale > 0
    if quality is not None:
        quality.bump(sid, "degenerate_pose", int(np.count_nonzero(valid & ~pose_ok)))
    valid &= pose_ok

    angles = np.full((n, 3), np.nan)
    if valid.any():
        angles[valid] = _euler_batch(R[valid])
    distance = np.full(n, np.nan)
    distance[valid] = model.focal_length_px / scale[valid]

    gimbal = valid & (np.abs(angles[:, 1]) > math.radians(gimbal_limit_deg))
    if quality is not None:
        quality.bump(sid, "gimbal_adjacent", int(np.count_nonzero(gimbal)))

    fps = recording.fps
    out: Dict[str, ChannelSeries] = {
        "ear_left": ChannelSeries("ear_left", ear_l, valid, fps),
        "ear_right": ChannelSeries("ear_right", ear_r, valid, fps),
        "head_pitch": ChannelSeries("head_pitch", angles[:, 0], valid, fps),
        "head_yaw": ChannelSeries("head_yaw", angles[:, 1], valid, fps),
        "head_roll": ChannelSeries("head_roll", angles[:, 2], valid, fps),
        "head_distance": ChannelSeries("head_distance", distance, valid, fps),
    }
    if recording.has_gaze:
        for side, tag in (("left", "gazeL"), ("right", "gazeR")):
            g = recording.gaze_array(side)
            g_ok = valid & np.all(np.isfinite(g), axis=1)
            out[f"{tag}_pitch"] = ChannelSeries(f"{tag}_pitch", g[:, 0], g_ok, fps)
            out[f"{tag}_yaw"] = ChannelSeries(f"{tag}_yaw", g[:, 1], g_ok, fps)

    for ch in out.values():
        ch.values = np.where(ch.valid_mask, ch.values, np.nan)

    logger.debug("%s: %d/%d frames usable", sid, int(valid.sum()), n)
    return out


def signals_to_frame(recording: Recording, raw: Dict[str, ChannelSeries],
                     gimbal_limit_deg: float = 80.0) -> pd.DataFrame:
    """One row per usable frame: frame_index, timestamp_s, every raw channel, gimbal flag."""
    df = pd.DataFrame({
        "frame_index": [f.frame_index for f in recording.frames],
        "timestamp_s": [f.timestamp_s for f in recording.frames],
    })
    for name in RAW_CHANNELS:
        if name in raw:
            df[name] = raw[name].values
    df["gimbal_adjacent"] = np.abs(df["head_yaw"]) > math.radians(gimbal_limit_deg)
    return df[raw["ear_left"].valid_mask].reset_index(drop=True)
