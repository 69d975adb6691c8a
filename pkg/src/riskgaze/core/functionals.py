"""
Thin-slice functionals: 10 statistics of each channel and of its first and
second differences, 30 per channel.

Moments are population (biased) moments. Differences are taken with respect
to the frame index (not divided by dt) and only inside contiguous valid
runs; peaks/valleys are counted per run so a gap never creates an extremum.
"""

from __future__ import annotations

import logging
import warnings
from typing import List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.signal import find_peaks
from scipy.stats import moment

from .errors import EmptySeries, TooShort
from .models import (
    STAT_NAMES,
    RiskLabel,
    Segment,
    SegmentFeatures,
    StatBlock,
    feature_names_for,
)

logger = logging.getLogger(__name__)

DEGENERATE_VAR = 1e-12
META_COLUMNS = ("subject_id", "risk_label", "segment_index")

Runs = Union[np.ndarray, Sequence[np.ndarray]]


def derivative(series, order: int = 1) -> np.ndarray:
    """Plain differences x[i+1] - x[i], applied `order` times."""
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
    x = np.asarray(series, dtype=float)
    if x.size < order + 1:
        raise TooShort(f"need at least {order + 1} samples for order {order}, got {x.size}")
    return np.diff(x, n=order)


def derivative_runs(runs: Sequence[np.ndarray], order: int) -> List[np.ndarray]:
    """Differences inside each run; runs too short for `order` contribute nothing."""
    return [np.diff(r, n=order) for r in runs if len(r) >= order + 1]


def _as_runs(series: Runs) -> List[np.ndarray]:
    if isinstance(series, np.ndarray) and series.ndim == 1:
        return [series.astype(float)]
    if isinstance(series, (list, tuple)) and series and all(
        isinstance(r, np.ndarray) and r.ndim == 1 for r in series
    ):
        return [np.asarray(r, dtype=float) for r in series]
    return [np.asarray(series, dtype=float)]


def _count_extrema(runs: List[np.ndarray]) -> Tuple[int, int]:
    peaks = valleys = 0
    for r in runs:
        if len(r) < 3:
            continue
        peaks += len(find_peaks(r)[0])
        valleys += len(find_peaks(-r)[0])
    return peaks, valleys


def stat_block(series: Runs) -> StatBlock:
    """
    The 10 statistics of one sequence (or of a list of contiguous runs,
    pooled for moments, counted per run for extrema).

    Skewness m3/m2^1.5 and excess kurtosis m4/m2^2 - 3 are reported as 0
    when m2 < 1e-12. A plateau peak counts once.
    """
    runs = _as_runs(series)
    x = np.concatenate(runs) if runs else np.empty(0)
    if x.size == 0:
        raise EmptySeries("cannot summarise an empty series")

    mx, mn = float(x.max()), float(x.min())
    # scipy warns about precision loss on near-constant input
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        m2 = float(moment(x, 2))
        if m2 < DEGENERATE_VAR:
            skew = kurt = 0.0
        else:
            skew = float(moment(x, 3)) / m2 ** 1.5
            kurt = float(moment(x, 4)) / m2 ** 2 - 3.0
    peaks, valleys = _count_extrema(runs)

    return StatBlock(
        max=mx,
        min=mn,
        range=mx - mn,
        mean=float(x.mean()),
        var=m2,
        std=float(np.sqrt(m2)),
        skew=skew,
        kurt=kurt,
        peaks=float(peaks),
        valleys=float(valleys),
    )


def _channel_functionals(runs: List[np.ndarray], min_valid_frames: int) -> List[float]:
    n_valid = sum(len(r) for r in runs)
    if n_valid < min_valid_frames:
        raise TooShort(f"{n_valid} valid frames < {min_valid_frames}")
    d1 = derivative_runs(runs, 1)
    d2 = derivative_runs(runs, 2)
    if not d1 or not d2:
        raise TooShort("no valid run long enough for second differences")

    values: List[float] = []
    for block_runs in (runs, d1, d2):
        values.extend(stat_block(block_runs).values())
    return values


def featurize(segment: Segment, min_valid_frames: int = 3) -> SegmentFeatures:
    """
    30 functionals per channel in the segment's channel order:
    d0 stats, d1 stats, d2 stats, each in STAT_NAMES order.
    A channel that is too short gets 30 zeros and a flag.
    """
    channels = list(segment.channels)
    values: List[float] = []
    flags: List[str] = []
    width = 3 * len(STAT_NAMES)

    for name in channels:
        try:
            values.extend(_channel_functionals(segment.channels[name].runs(), min_valid_frames))
        except TooShort as e:
            logger.debug("%s seg %d %s: %s",
                         segment.subject_id, segment.segment_index, name, e)
            values.extend([0.0] * width)
            flags.append(f"{name}:too_short")

    return SegmentFeatures(
        subject_id=segment.subject_id,
        risk_label=segment.risk_label,
        segment_index=segment.segment_index,
        features=np.asarray(values, dtype=float),
        feature_names=feature_names_for(channels),
        flags=tuple(flags),
    )


# -------------------------
# Tables
# -------------------------

def features_to_frame(rows: Sequence[SegmentFeatures]) -> pd.DataFrame:
    """One row per segment, ordered by (subject_id, segment_index)."""
    if not rows:
        return pd.DataFrame(columns=list(META_COLUMNS))
    names = rows[0].feature_names
    if any(r.feature_names != names for r in rows):
        raise ValueError("segments carry different feature sets")

    df = pd.DataFrame(np.vstack([r.features for r in rows]), columns=list(names))
    df.insert(0, "subject_id", [r.subject_id for r in rows])
    df.insert(1, "risk_label", [r.risk_label.value for r in rows])
    df.insert(2, "segment_index", [r.segment_index for r in rows])
    return df.sort_values(["subject_id", "segment_index"], kind="mergesort").reset_index(drop=True)


def feature_columns(df: pd.DataFrame) -> List[str]:
    return [c for c in df.columns if c not in META_COLUMNS]


def split_table(df: pd.DataFrame):
    """(X DataFrame, y int codes L=0/M=1/H=2, subject ids)."""
    X = df[feature_columns(df)].astype(float)
    y = np.array([RiskLabel.parse(v).code for v in df["risk_label"]], dtype=int)
    subjects = df["subject_id"].astype(str).to_numpy()
    return X, y, subjects
