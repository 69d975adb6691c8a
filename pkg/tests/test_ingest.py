import json

import numpy as np
import pytest

from riskgaze.core.errors import (
    EmptyCohort,
    MalformedRecord,
    MissingHeaderField,
    NonMonotonicFrameIndex,
    UnknownRiskLabel,
)
from riskgaze.core.models import CHANNELS, GAZE_CHANNELS, RiskLabel
from riskgaze.data.ingest import (
    LANDMARK_COLUMNS,
    cohort_channels,
    load_cohort,
    load_manifest,
    parse_recording,
    serialize_recording,
    validate_cohort,
    write_manifest,
)
from riskgaze.data.synth import cohort_spec, generate_cohort, write_cohort


def small_recording(**overrides):
    raw = {"n_subjects_per_level": [0, 0, 1], "minutes_per_subject": 0.5, "fps": 10.0,
           "invalid_fraction": 0.1, "seed": 21}
    raw.update(overrides)
    return generate_cohort(cohort_spec(raw))[0]


def write_csv(path, header, rows, landmarks_per_row=68):
    lines = [f"# {k}: {v}" for k, v in header.items()]
    lines.append(",".join(["frame_index", "timestamp_s"] + LANDMARK_COLUMNS))
    for i, t in rows:
        coords = [str(float(j)) for j in range(2 * landmarks_per_row)]
        coords += [""] * (len(LANDMARK_COLUMNS) - len(coords))
        lines.append(",".join([str(i), str(t)] + coords))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


HEADER = {"subject_id": "S01", "risk_label": "High", "fps": 10}


@pytest.mark.parametrize("fmt", ["csv", "jsonl"])
def test_serialize_then_parse_is_lossless(tmp_path, fmt):
    rec = small_recording()
    assert any(not f.valid for f in rec.frames)
    path = serialize_recording(rec, tmp_path / f"rec.{fmt}", fmt)
    assert parse_recording(path, fmt) == rec


def test_three_frame_csv(tmp_path):
    path = write_csv(tmp_path / "a.csv", HEADER, [(0, 0.0), (1, 0.1), (2, 0.2)])
    rec = parse_recording(path)
    assert rec.subject_id == "S01"
    assert rec.risk_label is RiskLabel.HIGH
    assert rec.n_frames == 3
    assert all(f.valid for f in rec.frames)
    assert rec.frames[2].landmarks.shape == (68, 2)
    assert not rec.has_gaze


def test_short_landmark_row_marks_frame_invalid(tmp_path):
    path = write_csv(tmp_path / "a.csv", HEADER, [(0, 0.0), (1, 0.1)])
    text = path.read_text().splitlines()
    cells = text[-1].split(",")
    cells[-2:] = ["", ""]                           # 67 landmark pairs
    text[-1] = ",".join(cells)
    path.write_text("\n".join(text) + "\n")

    rec = parse_recording(path)
    assert [f.valid for f in rec.frames] == [True, False]
    assert rec.frames[1].landmarks is None


def test_unknown_risk_label(tmp_path):
    path = write_csv(tmp_path / "a.csv", {**HEADER, "risk_label": "extreme"}, [(0, 0.0)])
    with pytest.raises(UnknownRiskLabel):
        parse_recording(path)


def test_missing_header_field_and_manifest_override(tmp_path):
    header = {"subject_id": "S01", "risk_label": "Low"}
    path = write_csv(tmp_path / "a.csv", header, [(0, 0.0), (1, 0.2)])
    with pytest.raises(MissingHeaderField):
        parse_recording(path)
    assert parse_recording(path, overrides={"fps": 5}).fps == 5.0


def test_file_header_wins_over_manifest(tmp_path):
    path = write_csv(tmp_path / "a.csv", HEADER, [(0, 0.0)])
    rec = parse_recording(path, overrides={"subject_id": "other", "fps": 30})
    assert (rec.subject_id, rec.fps) == ("S01", 10.0)


def test_non_monotonic_frame_index(tmp_path):
    path = write_csv(tmp_path / "a.csv", HEADER, [(0, 0.0), (2, 0.2), (1, 0.3)])
    with pytest.raises(NonMonotonicFrameIndex):
        parse_recording(path)


def test_nan_landmark_invalidates_frame(tmp_path):
    path = write_csv(tmp_path / "a.csv", HEADER, [(0, 0.0), (1, 0.1)])
    text = path.read_text().replace(",5.0,", ",nan,", 1)
    path.write_text(text)
    rec = parse_recording(path)
    assert [f.valid for f in rec.frames] == [False, True]


def test_bad_jsonl_line_skipped(tmp_path):
    rec = small_recording(invalid_fraction=0.0, minutes_per_subject=0.05)
    path = serialize_recording(rec, tmp_path / "r.jsonl", "jsonl")
    lines = path.read_text().splitlines()
    lines.insert(2, "{not json")
    path.write_text("\n".join(lines) + "\n")
    assert parse_recording(path, "jsonl").n_frames == rec.n_frames


def test_jsonl_frame_without_index_names_the_line(tmp_path):
    path = tmp_path / "r.jsonl"
    path.write_text(json.dumps(HEADER) + "\n" + json.dumps({"timestamp_s": 0.0, "valid": False}) + "\n",
                    encoding="utf-8")
    with pytest.raises(MalformedRecord, match="line 2: missing field 'frame_index'"):
        parse_recording(path, "jsonl")


# -------------------------
# Cohorts
# -------------------------

def test_validate_cohort_segment_prediction():
    recs = generate_cohort(cohort_spec({"n_subjects_per_level": [1, 1, 1],
                                        "minutes_per_subject": 16.0, "fps": 2.0}))
    summary = validate_cohort(recs)
    for label in RiskLabel:
        assert summary.levels[label].predicted_segments == 15
        assert summary.levels[label].minutes == pytest.approx(16.0)
    assert summary.total_segments == 45
    rows = summary.to_rows()
    assert rows[-1] == {"risk_level": "Total", "n_subjects": 3, "minutes": 48.0, "segments": 45}


@pytest.mark.parametrize("minutes, expected", [(2.0, 1), (1.5, 0)])
def test_short_recordings(minutes, expected):
    recs = generate_cohort(cohort_spec({"n_subjects_per_level": [1, 0, 0],
                                        "minutes_per_subject": minutes, "fps": 2.0}))
    assert validate_cohort(recs).total_segments == expected


def test_empty_cohort():
    with pytest.raises(EmptyCohort):
        validate_cohort([])


def test_gaze_dropped_cohort_wide(tiny_cohort):
    assert cohort_channels(tiny_cohort) == list(CHANNELS)
    no_gaze = generate_cohort(cohort_spec({"n_subjects_per_level": [1, 0, 0], "minutes_per_subject": 0.1,
                                           "include_gaze": False}))
    channels = cohort_channels(tiny_cohort + no_gaze)
    assert channels == [c for c in CHANNELS if c not in GAZE_CHANNELS]
    assert len(channels) == 5


def test_manifest_round_trip(tmp_path):
    manifest = write_manifest(tmp_path / "manifest.toml",
                              [{"path": "a.csv", "subject_id": "S1", "risk_label": "Low", "fps": 10.0}],
                              "jsonl")
    fmt, entries = load_manifest(manifest)
    assert fmt == "jsonl"
    assert entries[0]["path"] == str(tmp_path.resolve() / "a.csv")
    assert entries[0]["fps"] == 10.0


def test_manifest_format_beats_default(tmp_path):
    spec = cohort_spec({"n_subjects_per_level": [1, 1, 0], "minutes_per_subject": 0.1, "format": "jsonl"})
    manifest = write_cohort(spec, tmp_path / "cohort")
    recs = load_cohort(manifest, default_format="csv")
    assert [r.subject_id for r in recs] == ["L01", "M01"]
    assert recs == generate_cohort(spec)


def test_explicit_format_beats_manifest(tmp_path):
    spec = cohort_spec({"n_subjects_per_level": [1, 0, 0], "minutes_per_subject": 0.1, "format": "jsonl"})
    manifest = write_cohort(spec, tmp_path / "cohort")
    with pytest.raises(Exception):
        load_cohort(manifest, format="csv")


def test_landmark_array_nan_for_invalid():
    rec = small_recording()
    lm = rec.landmark_array()
    invalid = np.array([not f.valid for f in rec.frames])
    assert np.isnan(lm[invalid]).all()
    assert np.isfinite(lm[~invalid]).all()
