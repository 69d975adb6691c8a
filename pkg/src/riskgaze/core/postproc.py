from __future__ import annotations

import logging
from typing import Dict, List, Mapping, Optional

import numpy as np
import pandas as pd

from .errors import AllInvalid, EvenWindow, LengthMismatch
from .models import (
    CHANNELS,
    GAZE_CHANNELS,
    ChannelSeries,
    QualityReport,
    RiskLabel,
    Segment,
    valid_runs,
)

logger = logging.getLogger(__name__)

FLAT_RANGE = 1e-12              # relative; narrower ranges normalise as constant

# post-processed channel -> raw per-eye (left, right) channels
EYE_PAIRS = {
    "avg_ear": ("ear_left", "ear_right"),
    "eye_pitch": ("gazeL_pitch", "gazeR_pitch"),
    "eye_yaw": ("gazeL_yaw", "gazeR_yaw"),
}


def moving_average(series: ChannelSeries, window: int = 7) -> ChannelSeries:
    """
    Centred moving average. The window is truncated at the recording edges
    and at invalid frames: it never reaches across a gap.
    """
    if window < 1 or window % 2 == 0:
        raise EvenWindow(f"window must be odd and >= 1, got {window}")

    out = np.full(len(series), np.nan)
    for a, b in valid_runs(series.valid_mask):
        run = pd.Series(series.values[a:b])
        out[a:b] = run.rolling(window, center=True, min_periods=1).mean().to_numpy()
    return ChannelSeries(series.name, out, series.valid_mask.copy(), series.fps)


def average_eyes(left: ChannelSeries, right: ChannelSeries, name: str | None = None) -> ChannelSeries:
    """Per-frame mean where both eyes are valid, the valid side alone otherwise."""
    if len(left) != len(right) or left.fps != right.fps:
        raise LengthMismatch(
            f"{left.name}/{right.name}: lengths {len(left)}/{len(right)}, "
            f"fps {left.fps}/{right.fps}")

    lv, rv = left.valid_mask, right.valid_mask
    out = np.full(len(left), np.nan)
    both = lv & rv
    out[both] = 0.5 * (left.values[both] + right.values[both])
    only_l = lv & ~rv
    only_r = rv & ~lv
    out[only_l] = left.values[only_l]
    out[only_r] = right.values[only_r]
    return ChannelSeries(name or left.name, out, lv | rv, left.fps)


def minmax_normalize(series: ChannelSeries) -> ChannelSeries:
    """
    Linear map of the valid values onto [0, 1] over the whole recording.
    A constant series (range within FLAT_RANGE) maps to 0.5.
    """
    vals = series.valid_values()
    if vals.size == 0:
        raise AllInvalid(f"{series.name}: no valid values to normalise")

    lo, hi = float(vals.min()), float(vals.max())
    out = np.full(len(series), np.nan)
    mask = series.valid_mask
    if hi - lo > FLAT_RANGE * max(1.0, abs(hi), abs(lo)):
        out[mask] = (series.values[mask] - lo) / (hi - lo)
    else:
        out[mask] = 0.5
    return ChannelSeries(series.name, out, mask.copy(), series.fps)


def window_frames(fps: float, seconds: float) -> int:
    return int(round(fps * seconds))


def segment_count(n_frames: int, fps: float, window_s: float = 120.0, hop_s: float = 60.0) -> int:
    """floor((D - window) / hop) + 1 for D >= window, else 0 (in frames)."""
    w, h = window_frames(fps, window_s), window_frames(fps, hop_s)
    if n_frames < w:
        return 0
    return (n_frames - w) // h + 1


def slice_segments(
    channels: Mapping[str, ChannelSeries],
    subject_id: str,
    risk_label: RiskLabel,
    window_s: float = 120.0,
    hop_s: float = 60.0,
    min_valid_fraction: float = 0.8,
    quality: Optional[QualityReport] = None,
) -> List[Segment]:
    """
    Windows start at 0, hop, 2*hop, ...; trailing partial windows are
    dropped. A frame is valid for a segment when every channel is valid at
    it; segments under `min_valid_fraction` are discarded and counted.
    """
    if not (window_s > hop_s > 0):
        raise ValueError(f"need window_s > hop_s > 0, got {window_s}, {hop_s}")
    if not channels:
        return []

    series = list(channels.values())
    fps = series[0].fps
    n = len(series[0])
    if any(len(s) != n or s.fps != fps for s in series):
        raise LengthMismatch(f"{subject_id}: channels differ in length or fps")

    w, h = window_frames(fps, window_s), window_frames(fps, hop_s)
    all_valid = np.logical_and.reduce([s.valid_mask for s in series])

    segments: List[Segment] = []
    discarded = 0
    for k in range(segment_count(n, fps, window_s, hop_s)):
        start = k * h
        stop = start + w
        frac = float(all_valid[start:stop].mean())
        if frac < min_valid_fraction:
            discarded += 1
            continue
        segments.append(
            Segment(
                subject_id=subject_id,
                risk_label=risk_label,
                segment_index=k,
                start_s=start / fps,
                end_s=stop / fps,
                channels={name: s.slice(start, stop) for name, s in channels.items()},
                valid_fraction=frac,
            )
        )

    if discarded:
        logger.info("%s: discarded %d segment(s) below valid fraction %.2f",
                    subject_id, discarded, min_valid_fraction)
        if quality is not None:
            quality.bump(subject_id, "discarded_segments", discarded)
    return segments


def postprocess_recording(
    raw: Mapping[str, ChannelSeries],
    window: int = 7,
    smooth_before_merge: bool = True,
    include_gaze: bool = True,
    subject_id: str = "",
    quality: Optional[QualityReport] = None,
) -> Dict[str, ChannelSeries]:
    """
    Raw per-eye channels -> the post-processed channels, in CHANNELS order:
    smooth, merge the two eyes, then rescale to [0, 1] per recording.
    """
    names = [c for c in CHANNELS if include_gaze or c not in GAZE_CHANNELS]
    out: Dict[str, ChannelSeries] = {}

    for name in names:
        if name in EYE_PAIRS:
            left, right = (raw[n] for n in EYE_PAIRS[name])
            if smooth_before_merge:
                merged = average_eyes(moving_average(left, window),
                                      moving_average(right, window), name)
            else:
                merged = moving_average(average_eyes(left, right, name), window)
        else:
            merged = moving_average(raw[name], window)

        try:
            out[name] = minmax_normalize(merged)
        except AllInvalid as e:
            logger.warning("%s: %s", subject_id, e)
            if quality is not None:
                quality.bump(subject_id, "all_invalid_channels")
            out[name] = ChannelSeries(name, np.full(len(merged), np.nan),
                                      np.zeros(len(merged), dtype=bool), merged.fps)
    return out
