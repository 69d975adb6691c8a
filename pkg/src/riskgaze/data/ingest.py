"""
Landmark recordings on disk.

CSV: leading `# key: value` lines carry subject_id / risk_label / fps, then
a header row with frame_index, timestamp_s, x0, y0, ..., x67, y67, optional
gazeL_pitch, gazeL_yaw, gazeR_pitch, gazeR_yaw and an optional valid column.

JSONL: the first line is a header object, every further line one frame.

A frame with the wrong number of landmarks or any non-finite coordinate is
kept but marked invalid; a non-finite gaze value only drops that frame's gaze.
"""

from __future__ import annotations

import json
import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from ..core.errors import EmptyCohort, MalformedRecord, MissingHeaderField, NonMonotonicFrameIndex
from ..core.models import (
    CHANNELS,
    GAZE_CHANNELS,
    N_LANDMARKS,
    RISK_ORDER,
    CohortLevel,
    CohortSummary,
    LandmarkFrame,
    Recording,
    RiskLabel,
)
from ..core.postproc import segment_count

logger = logging.getLogger(__name__)

HEADER_FIELDS = ("subject_id", "risk_label", "fps")
LANDMARK_COLUMNS = [f"{axis}{i}" for i in range(N_LANDMARKS) for axis in ("x", "y")]
GAZE_COLUMNS = ["gazeL_pitch", "gazeL_yaw", "gazeR_pitch", "gazeR_yaw"]


# -------------------------
# Header handling
# -------------------------

def _read_csv_header(path: Path) -> Tuple[Dict[str, str], int]:
    meta: Dict[str, str] = {}
    n = 0
    with path.open("r", encoding="utf-8") as f:
        for line in f:
            if not line.startswith("#"):
                break
            n += 1
            key, sep, value = line[1:].partition(":")
            if sep:
                meta[key.strip()] = value.strip()
    return meta, n


def _resolve_header(meta: Dict[str, Any], overrides: Optional[Dict[str, Any]], path: Path):
    merged = dict(meta)
    for k, v in (overrides or {}).items():
        if v is not None and k in HEADER_FIELDS:
            merged.setdefault(k, v)
    missing = [k for k in HEADER_FIELDS if merged.get(k) in (None, "")]
    if missing:
        raise MissingHeaderField(f"{path}: missing header field(s) {missing}")

    label = RiskLabel.parse(merged["risk_label"])
    try:
        fps = float(merged["fps"])
    except (TypeError, ValueError):
        raise MissingHeaderField(f"{path}: fps is not a number: {merged['fps']!r}")
    if not (math.isfinite(fps) and fps > 0):
        raise MissingHeaderField(f"{path}: fps must be positive, got {fps}")
    return str(merged["subject_id"]), label, fps


def _check_order(frames: Sequence[LandmarkFrame], path: Path) -> None:
    for prev, cur in zip(frames, frames[1:]):
        if cur.frame_index <= prev.frame_index:
            raise NonMonotonicFrameIndex(
                f"{path}: frame_index {cur.frame_index} follows {prev.frame_index}")
        if cur.timestamp_s < prev.timestamp_s:
            raise NonMonotonicFrameIndex(
                f"{path}: timestamp {cur.timestamp_s} follows {prev.timestamp_s} "
                f"at frame {cur.frame_index}")


def _gaze(pitch, yaw) -> Optional[Tuple[float, float]]:
    if pitch is None or yaw is None:
        return None
    pitch, yaw = float(pitch), float(yaw)
    if not (math.isfinite(pitch) and math.isfinite(yaw)):
        return None
    return (pitch, yaw)


def _landmarks(raw) -> Optional[np.ndarray]:
    try:
        arr = np.asarray(raw, dtype=float).reshape(-1, 2)
    except (TypeError, ValueError):
        return None
    if arr.shape != (N_LANDMARKS, 2) or not np.all(np.isfinite(arr)):
        return None
    return arr


def _frame(frame_index, timestamp_s, landmarks_raw, flagged_valid: bool,
           gaze_left=None, gaze_right=None) -> LandmarkFrame:
    lm = _landmarks(landmarks_raw) if flagged_valid else None
    valid = lm is not None
    return LandmarkFrame(
        frame_index=int(frame_index),
        timestamp_s=float(timestamp_s),
        landmarks=lm,
        gaze_left=gaze_left,
        gaze_right=gaze_right,
        valid=valid,
    )


# -------------------------
# Parsing
# -------------------------

def _parse_csv(path: Path, overrides) -> Recording:
    meta, n_meta = _read_csv_header(path)
    subject_id, label, fps = _resolve_header(meta, overrides, path)

    df = pd.read_csv(path, skiprows=n_meta, float_precision="round_trip")
    for col in ("frame_index", "timestamp_s"):
        if col not in df.columns:
            raise MissingHeaderField(f"{path}: missing column {col!r}")

    lm_cols = [c for c in LANDMARK_COLUMNS if c in df.columns]
    if len(lm_cols) != len(LANDMARK_COLUMNS):
        logger.warning("%s: %d landmark columns, expected %d; every frame is invalid",
                       path, len(lm_cols), len(LANDMARK_COLUMNS))
    lm = df[lm_cols].to_numpy(dtype=float)
    has_gaze = all(c in df.columns for c in GAZE_COLUMNS)
    gaze = df[GAZE_COLUMNS].to_numpy(dtype=float) if has_gaze else None
    flagged = (df["valid"].fillna(0).astype(int).to_numpy() != 0
               if "valid" in df.columns else np.ones(len(df), dtype=bool))

    frames = [
        _frame(
            df["frame_index"].iat[i],
            df["timestamp_s"].iat[i],
            lm[i],
            bool(flagged[i]),
            _gaze(gaze[i, 0], gaze[i, 1]) if has_gaze else None,
            _gaze(gaze[i, 2], gaze[i, 3]) if has_gaze else None,
        )
        for i in range(len(df))
    ]
    return Recording(subject_id=subject_id, risk_label=label, fps=fps, frames=frames)


def _parse_jsonl(path: Path, overrides) -> Recording:
    with path.open("r", encoding="utf-8") as f:
        lines = [ln for ln in (raw.strip() for raw in f) if ln]
    if not lines:
        raise MissingHeaderField(f"{path}: empty file, no header line")

    header = json.loads(lines[0])
    if not isinstance(header, dict):
        raise MissingHeaderField(f"{path}: first line is not a header object")
    subject_id, label, fps = _resolve_header(header, overrides, path)

    frames: List[LandmarkFrame] = []
    for n, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            logger.warning("%s line %d: bad JSON (%s), skipped", path, n, e)
            continue
        if not isinstance(obj, dict):
            continue
        gl, gr = obj.get("gaze_left"), obj.get("gaze_right")
        try:
            frames.append(_frame(
                obj["frame_index"],
                obj["timestamp_s"],
                obj.get("landmarks"),
                bool(obj.get("valid", True)),
                _gaze(*gl) if gl else None,
                _gaze(*gr) if gr else None,
            ))
        except KeyError as e:
            raise MalformedRecord(f"{path} line {n}: missing field {e.args[0]!r}") from e
        except (TypeError, ValueError) as e:
            raise MalformedRecord(f"{path} line {n}: {e}") from e
    return Recording(subject_id=subject_id, risk_label=label, fps=fps, frames=frames)


def parse_recording(path: str | Path, format: str = "csv",
                    overrides: Optional[Dict[str, Any]] = None) -> Recording:
    """
    Parse one recording. `overrides` (from a manifest) fill header fields
    the file does not declare.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if format == "csv":
        rec = _parse_csv(path, overrides)
    elif format == "jsonl":
        rec = _parse_jsonl(path, overrides)
    else:
        raise ValueError(f"unknown format {format!r}")

    _check_order(rec.frames, path)
    n_invalid = sum(not f.valid for f in rec.frames)
    logger.debug("%s: %d frames (%d invalid)", path.name, rec.n_frames, n_invalid)
    return rec


# -------------------------
# Serialization
# -------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def serialize_recording(rec: Recording, path: str | Path, format: str = "csv") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    has_gaze = rec.has_gaze

    if format == "jsonl":
        with path.open("w", encoding="utf-8") as f:
            f.write(json.dumps({"subject_id": rec.subject_id, "risk_label": rec.risk_label.value,
                                "fps": rec.fps}) + "\n")
            for fr in rec.frames:
                f.write(json.dumps({
                    "frame_index": fr.frame_index,
                    "timestamp_s": fr.timestamp_s,
                    "landmarks": fr.landmarks.tolist() if fr.landmarks is not None else None,
                    "gaze_left": list(fr.gaze_left) if fr.gaze_left else None,
                    "gaze_right": list(fr.gaze_right) if fr.gaze_right else None,
                    "valid": fr.valid,
                }) + "\n")
        return path
    if format != "csv":
        raise ValueError(f"unknown format {format!r}")

    columns = ["frame_index", "timestamp_s"] + LANDMARK_COLUMNS
    if has_gaze:
        columns += GAZE_COLUMNS
    columns.append("valid")

    with path.open("w", encoding="utf-8", newline="") as f:
        f.write(f"# subject_id: {rec.subject_id}\n")
        f.write(f"# risk_label: {rec.risk_label.value}\n")
        f.write(f"# fps: {_fmt(rec.fps)}\n")
        f.write(",".join(columns) + "\n")
        blank_lm = [""] * len(LANDMARK_COLUMNS)
        for fr in rec.frames:
            cells = [str(fr.frame_index), _fmt(fr.timestamp_s)]
            cells += ([_fmt(v) for v in fr.landmarks.ravel()]
                      if fr.landmarks is not None else blank_lm)
            if has_gaze:
                for g in (fr.gaze_left, fr.gaze_right):
                    cells += [_fmt(g[0]), _fmt(g[1])] if g else ["", ""]
            cells.append("1" if fr.valid else "0")
            f.write(",".join(cells) + "\n")
    return path


# -------------------------
# Manifests / cohorts
# -------------------------

def load_manifest(path: str | Path) -> Tuple[Optional[str], List[Dict[str, Any]]]:
    """
    (declared format or None, entries). Each entry has an absolute `path` plus any of
    subject_id / risk_label / fps given in the manifest.
    """
    path = Path(path)
    with path.open("rb") as f:
        raw = tomllib.load(f)
    fmt = raw.get("format")
    entries = []
    for i, item in enumerate(raw.get("recordings", [])):
        if not isinstance(item, dict) or "path" not in item:
            logger.warning("%s: recordings[%d] has no path, skipped", path, i)
            continue
        p = Path(item["path"])
        if not p.is_absolute():
            p = path.resolve().parent / p
        entries.append({**item, "path": str(p)})
    return fmt, entries


def write_manifest(path: str | Path, entries: Iterable[Dict[str, Any]], format: str = "csv") -> Path:
    path = Path(path)
    lines = [f"format = {json.dumps(format)}", ""]
    for e in entries:
        lines.append("[[recordings]]")
        for key in ("path", "subject_id", "risk_label"):
            if key in e:
                lines.append(f"{key} = {json.dumps(str(e[key]))}")
        if "fps" in e:
            lines.append(f"fps = {_fmt(e['fps'])}")
        lines.append("")
    path.write_text("\n".join(lines), encoding="utf-8")
    return path


def load_cohort(manifest: str | Path, format: Optional[str] = None, n_jobs: int = 1,
                default_format: str = "csv") -> List[Recording]:
    """An explicit `format` beats the manifest's, which beats `default_format`."""
    declared, entries = load_manifest(manifest)
    fmt = format or declared or default_format
    recordings = Parallel(n_jobs=n_jobs)(
        delayed(parse_recording)(e["path"], fmt, e) for e in entries
    )
    logger.info("loaded %d recordings (%d frames) from %s",
                len(recordings), sum(r.n_frames for r in recordings), manifest)
    return recordings


def validate_cohort(recordings: Sequence[Recording], window_s: float = 120.0,
                    hop_s: float = 60.0) -> CohortSummary:
    if not recordings:
        raise EmptyCohort("cohort has no recordings")
    levels: Dict[RiskLabel, CohortLevel] = {}
    for label in RISK_ORDER:
        recs = [r for r in recordings if r.risk_label == label]
        levels[label] = CohortLevel(
            n_subjects=len({r.subject_id for r in recs}),
            minutes=sum(r.duration_s for r in recs) / 60.0,
            predicted_segments=sum(segment_count(r.n_frames, r.fps, window_s, hop_s) for r in recs),
        )
    return CohortSummary(levels=levels, window_s=window_s, hop_s=hop_s)


def cohort_channels(recordings: Sequence[Recording]) -> List[str]:
    """Post-processed channels usable across the whole cohort."""
    if all(r.has_gaze for r in recordings):
        return list(CHANNELS)
    missing = [r.subject_id for r in recordings if not r.has_gaze]
    logger.warning("no gaze for %s; dropping %s cohort-wide", missing, list(GAZE_CHANNELS))
    return [c for c in CHANNELS if c not in GAZE_CHANNELS]
