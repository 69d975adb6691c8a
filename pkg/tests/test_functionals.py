import warnings

import numpy as np
import pytest

from riskgaze.app.pipeline import extract_signals, slice_cohort
from riskgaze.core.config import config_from_dict
from riskgaze.core.errors import EmptySeries, TooShort
from riskgaze.core.functionals import derivative, features_to_frame, featurize, split_table, stat_block
from riskgaze.core.models import CHANNELS, STAT_NAMES, ChannelSeries, QualityReport, RiskLabel, Segment
from riskgaze.data.ingest import cohort_channels
from riskgaze.data.synth import cohort_spec, generate_cohort


def test_derivative():
    np.testing.assert_array_equal(derivative([0, 1, 3, 6], 1), [1, 2, 3])
    np.testing.assert_array_equal(derivative([0, 1, 3, 6], 2), [1, 1])
    np.testing.assert_array_equal(derivative(np.full(5, 2.5), 1), np.zeros(4))


def test_derivative_too_short():
    with pytest.raises(TooShort):
        derivative([1.0, 2.0], 2)


def test_stat_block_near_constant_is_quiet():
    x = 0.3 + 1e-13 * np.sin(np.arange(240))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        b = stat_block(x)
    assert (b.skew, b.kurt) == (0.0, 0.0)


def test_stat_block_small_example():
    b = stat_block(np.array([1.0, 3.0, 2.0, 5.0, 4.0]))
    assert (b.max, b.min, b.range, b.mean) == (5.0, 1.0, 4.0, 3.0)
    assert b.var == pytest.approx(2.0)
    assert (b.peaks, b.valleys) == (2.0, 1.0)


def test_stat_block_plateau_counts_once():
    b = stat_block(np.array([0.0, 2.0, 2.0, 2.0, 0.0, 1.0, 1.0, 3.0]))
    assert b.peaks == 1.0
    assert b.valleys == 1.0


def test_stat_block_degenerate_moments():
    b = stat_block(np.full(10, 0.5))
    assert (b.var, b.std, b.skew, b.kurt, b.peaks, b.valleys) == (0, 0, 0, 0, 0, 0)


def test_stat_block_empty():
    with pytest.raises(EmptySeries):
        stat_block(np.empty(0))


# -------------------------
# Brute-force oracle
# -------------------------

def oracle_extrema(run):
    peaks = valleys = 0
    n = len(run)
    i = 1
    while i < n - 1:
        j = i
        while j + 1 < n and run[j + 1] == run[i]:
            j += 1
        if j + 1 < n:
            if run[i - 1] < run[i] and run[j + 1] < run[i]:
                peaks += 1
            if run[i - 1] > run[i] and run[j + 1] > run[i]:
                valleys += 1
        i = j + 1
    return peaks, valleys


def oracle_block(runs):
    x = [v for r in runs for v in r]
    n = len(x)
    mean = sum(x) / n
    m2 = sum((v - mean) ** 2 for v in x) / n
    m3 = sum((v - mean) ** 3 for v in x) / n
    m4 = sum((v - mean) ** 4 for v in x) / n
    skew = 0.0 if m2 < 1e-12 else m3 / m2 ** 1.5
    kurt = 0.0 if m2 < 1e-12 else m4 / m2 ** 2 - 3.0
    peaks = valleys = 0
    for r in runs:
        p, v = oracle_extrema(r)
        peaks += p
        valleys += v
    return [max(x), min(x), max(x) - min(x), mean, m2, m2 ** 0.5, skew, kurt, peaks, valleys]


def oracle_diff(run):
    return [b - a for a, b in zip(run, run[1:])]


def oracle_features(segment):
    out = []
    for ch in segment.channels.values():
        runs, cur = [], []
        for v, ok in zip(ch.values, ch.valid_mask):
            if ok:
                cur.append(float(v))
            elif cur:
                runs.append(cur)
                cur = []
        if cur:
            runs.append(cur)
        d1 = [oracle_diff(r) for r in runs if len(r) >= 2]
        d2 = [oracle_diff(r) for r in d1 if len(r) >= 2]
        for block in (runs, d1, d2):
            out.extend(oracle_block(block))
    return np.array(out)


def random_segment(rng, n=120):
    channels = {}
    for name in CHANNELS:
        values = np.round(rng.random(n), 1)             # rounding creates plateaus
        valid = rng.random(n) > 0.05
        valid[:5] = True
        channels[name] = ChannelSeries(name, np.where(valid, values, np.nan), valid, 10.0)
    return Segment("S1", RiskLabel.MEDIUM, 0, 0.0, n / 10.0, channels, float(valid.mean()))


def test_featurize_matches_oracle(rng):
    for _ in range(100):
        seg = random_segment(rng)
        got = featurize(seg)
        assert got.flags == ()
        np.testing.assert_allclose(got.features, oracle_features(seg), rtol=1e-10, atol=1e-10)


def test_featurize_shape_names_and_determinism(rng):
    seg = random_segment(rng)
    a, b = featurize(seg), featurize(seg)
    assert len(a.features) == 210
    assert a.feature_names[0] == "avg_ear-d0_max"
    assert "head_roll-d1_kurt" in a.feature_names
    assert a.feature_names[-1] == "head_roll-d2_valleys"
    np.testing.assert_array_equal(a.features, b.features)


def test_too_short_channel_is_zero_filled():
    n = 20
    valid = np.zeros(n, dtype=bool)
    valid[[0, 5, 10]] = True                            # three isolated frames: no differences
    channels = {
        "avg_ear": ChannelSeries("avg_ear", np.linspace(0, 1, n), np.ones(n, bool), 10.0),
        "head_yaw": ChannelSeries("head_yaw", np.linspace(0, 1, n), valid, 10.0),
    }
    sf = featurize(Segment("S1", RiskLabel.LOW, 0, 0.0, 2.0, channels, 1.0))
    assert sf.flags == ("head_yaw:too_short",)
    np.testing.assert_array_equal(sf.features[30:], np.zeros(30))
    assert sf.features[:30].any()


def test_null_cohort_hits_degenerate_conventions():
    cfg = config_from_dict({"postproc": {"window_s": 60.0, "hop_s": 30.0}})
    recs = generate_cohort(cohort_spec({"preset": "null", "n_subjects_per_level": [1, 1, 1],
                                        "minutes_per_subject": 2.0, "noise_sigma": 0.0}))
    quality = QualityReport()
    raw = extract_signals(recs, cfg, quality)
    segments = slice_cohort(recs, raw, cohort_channels(recs), cfg, quality)
    assert len(segments) == 9

    table = features_to_frame([featurize(s) for s in segments])
    X, y, subjects = split_table(table)
    assert X.shape == (9, 210)
    for name in X.columns:
        stat = name.split("_")[-1]
        expected = 0.5 if name.split("-")[1].startswith("d0") and stat in ("max", "min", "mean") else 0.0
        np.testing.assert_array_equal(X[name].to_numpy(), expected, err_msg=name)
    assert sorted(set(y.tolist())) == [0, 1, 2]
    assert list(subjects) == sorted(subjects)


def test_features_to_frame_orders_rows(rng):
    rows = []
    for sid, idx in (("M01", 1), ("L01", 2), ("M01", 0), ("L01", 0)):
        seg = random_segment(rng)
        seg.subject_id, seg.segment_index = sid, idx
        rows.append(featurize(seg))
    df = features_to_frame(rows)
    assert list(zip(df["subject_id"], df["segment_index"])) == [("L01", 0), ("L01", 2), ("M01", 0), ("M01", 1)]
    assert list(df.columns[:3]) == ["subject_id", "risk_label", "segment_index"]
    assert df.shape == (4, 213)


def test_stat_names_order():
    assert STAT_NAMES == ("max", "min", "range", "mean", "var", "std", "skew", "kurt", "peaks", "valleys")
