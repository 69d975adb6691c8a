import numpy as np
import pytest

from riskgaze.core.errors import AllInvalid, EvenWindow, LengthMismatch
from riskgaze.core.models import CHANNELS, ChannelSeries, QualityReport, RiskLabel
from riskgaze.core.postproc import (
    average_eyes,
    minmax_normalize,
    moving_average,
    postprocess_recording,
    segment_count,
    slice_segments,
)


def series(values, valid=None, name="x", fps=10.0):
    values = np.asarray(values, dtype=float)
    valid = np.ones(len(values), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    return ChannelSeries(name, values, valid, fps)


# -------------------------
# Moving average
# -------------------------

def test_moving_average_constant():
    out = moving_average(series(np.full(30, 0.37)), 7)
    np.testing.assert_allclose(out.values, 0.37, rtol=0, atol=1e-12)


def test_moving_average_impulse():
    x = np.zeros(21)
    x[10] = 1.0
    out = moving_average(series(x), 7).values
    expected = np.zeros(21)
    expected[7:14] = 1.0 / 7.0
    np.testing.assert_allclose(out, expected, atol=1e-15)


def test_moving_average_window_one_is_identity(rng):
    x = rng.normal(size=50)
    np.testing.assert_array_equal(moving_average(series(x), 1).values, x)


def test_moving_average_even_window():
    with pytest.raises(EvenWindow):
        moving_average(series(np.zeros(5)), 4)


def test_moving_average_does_not_cross_gaps():
    s = series([1, 1, 1, 99, 5, 5, 5], valid=[1, 1, 1, 0, 1, 1, 1])
    out = moving_average(s, 3)
    np.testing.assert_allclose(out.values[:3], 1.0)
    np.testing.assert_allclose(out.values[4:], 5.0)
    assert np.isnan(out.values[3])
    np.testing.assert_array_equal(out.valid_mask, s.valid_mask)


def test_moving_average_truncates_at_edges():
    out = moving_average(series([0, 3, 6, 9, 12]), 3).values
    np.testing.assert_allclose(out, [1.5, 3, 6, 9, 10.5])


# -------------------------
# Eye merge
# -------------------------

def test_average_eyes():
    left = series([0.2, 0.5, 0.1], valid=[1, 0, 1])
    right = series([0.4, 0.4, 0.9], valid=[1, 1, 0])
    out = average_eyes(left, right, "avg_ear")
    np.testing.assert_allclose(out.values, [0.3, 0.4, 0.1])
    assert out.name == "avg_ear"
    assert out.valid_mask.all()


def test_average_eyes_identical_inputs(rng):
    s = series(rng.random(40))
    np.testing.assert_array_equal(average_eyes(s, s).values, s.values)


def test_average_eyes_length_mismatch():
    with pytest.raises(LengthMismatch):
        average_eyes(series([1, 2]), series([1, 2, 3]))


# -------------------------
# Normalisation
# -------------------------

def test_minmax():
    np.testing.assert_allclose(minmax_normalize(series([2, 4, 6])).values, [0, 0.5, 1])


def test_minmax_constant():
    np.testing.assert_array_equal(minmax_normalize(series([3, 3, 3])).values, [0.5, 0.5, 0.5])


def test_minmax_ignores_invalid():
    out = minmax_normalize(series([2, 100, 6], valid=[1, 0, 1]))
    assert out.values[0] == 0.0 and out.values[2] == 1.0
    assert np.isnan(out.values[1])


def test_minmax_all_invalid():
    with pytest.raises(AllInvalid):
        minmax_normalize(series([1, 2], valid=[0, 0]))


# -------------------------
# Segmentation
# -------------------------

@pytest.mark.parametrize("seconds, expected", [(300, 4), (120, 1), (90, 0), (960, 15)])
def test_segment_count(seconds, expected):
    assert segment_count(int(seconds * 10), 10.0) == expected


def test_slice_segments_starts_and_discard():
    n = 3000                                            # 300 s at 10 fps
    valid = np.ones(n, dtype=bool)
    valid[:400] = False                                 # first window only 2/3 valid
    channels = {"a": series(np.arange(n), valid), "b": series(np.ones(n))}
    quality = QualityReport()

    segs = slice_segments(channels, "S1", RiskLabel.LOW, quality=quality)
    assert [s.segment_index for s in segs] == [1, 2, 3]
    assert [s.start_s for s in segs] == [60.0, 120.0, 180.0]
    assert [s.end_s for s in segs] == [180.0, 240.0, 300.0]
    assert all(len(s.channels["a"]) == 1200 for s in segs)
    assert segs[0].channels["a"].values[0] == 600.0
    assert quality.get("S1", "discarded_segments") == 1


def test_slice_segments_requires_hop_below_window():
    with pytest.raises(ValueError):
        slice_segments({"a": series(np.zeros(100))}, "S1", RiskLabel.LOW, window_s=60, hop_s=60)


def test_slice_segments_partial_window_dropped():
    segs = slice_segments({"a": series(np.zeros(1500))}, "S1", RiskLabel.HIGH)
    assert len(segs) == 1                               # 150 s: only [0, 120)


def test_postprocess_recording_channels():
    n = 50
    ramp = np.linspace(0.1, 0.3, n)
    raw = {name: series(ramp, name=name) for name in (
        "ear_left", "ear_right", "gazeL_pitch", "gazeR_pitch", "gazeL_yaw", "gazeR_yaw",
        "head_distance", "head_pitch", "head_yaw", "head_roll")}
    out = postprocess_recording(raw, window=5)
    assert list(out) == list(CHANNELS)
    for ch in out.values():
        assert ch.values.min() == 0.0 and ch.values.max() == 1.0

    no_gaze = postprocess_recording(raw, window=5, include_gaze=False)
    assert "eye_pitch" not in no_gaze and len(no_gaze) == 5


def test_postprocess_all_invalid_channel_is_counted():
    n = 20
    raw = {name: series(np.ones(n), name=name) for name in (
        "ear_left", "ear_right", "head_distance", "head_pitch", "head_yaw", "head_roll")}
    raw["head_roll"] = series(np.ones(n), valid=np.zeros(n), name="head_roll")
    quality = QualityReport()
    out = postprocess_recording(raw, include_gaze=False, subject_id="S1", quality=quality)
    assert not out["head_roll"].valid_mask.any()
    assert quality.get("S1", "all_invalid_channels") == 1
