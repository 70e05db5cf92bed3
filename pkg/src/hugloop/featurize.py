"""Baseline estimation, window segmentation, and the 80-statistic extractor.

The feature registry is versioned through ``SCHEMA_ID``: ten base statistics
over six streams (pressure / mic, each raw plus first and second index-based
differences) and ten extra statistics over the two raw streams. Definitions
chosen for determinism:

* median / quartiles: order statistics without interpolation (lower median,
  Q1 at index (n-1)//4, Q3 at index 3*(n-1)//4 of the sorted values)
* variance and std: population form (divide by n)
* peaks: strict local maxima, no prominence filter
* area under curve: trapezoid with unit (index) spacing
* zero crossings: adjacent pairs with strictly opposite signs
* skewness / kurtosis: population moments, excess kurtosis, and exactly 0
  when the second moment is 0 so degenerate windows never produce NaN
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    EngineParams,
    GestureClass,
    GestureInterval,
    HugRecording,
    SensorSample,
)

SCHEMA_ID = "stat80-v1"

BASE_STATS = ("sum", "min", "max", "mean", "median", "std", "var", "peaks", "iqr", "auc")
EXTRA_STATS = (
    "rms",
    "mav",
    "ptp",
    "skew",
    "kurtosis",
    "zero_crossings",
    "energy",
    "first",
    "last",
    "above_baseline",
)
STREAMS = ("pressure", "pressure_d1", "pressure_d2", "mic", "mic_d1", "mic_d2")
RAW_STREAMS = ("pressure", "mic")

N_FEATURES = len(STREAMS) * len(BASE_STATS) + len(RAW_STREAMS) * len(EXTRA_STATS)


def feature_names() -> tuple[str, ...]:
    """The 80 feature names in registry order."""
    names = [f"{stream}_{stat}" for stream in STREAMS for stat in BASE_STATS]
    names += [f"{stream}_{stat}" for stream in RAW_STREAMS for stat in EXTRA_STATS]
    return tuple(names)


@dataclass(frozen=True)
class Baseline:
    """Per-hug reference levels subtracted from both channels."""

    pressure_med: float
    mic_med: float


@dataclass(frozen=True)
class Window:
    """One baseline-subtracted segment of window_w samples."""

    pressure: np.ndarray
    mic: np.ndarray
    start_index: int                       # sample offset from hug start
    label: GestureClass | None = None


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray                     # exactly N_FEATURES finite floats
    schema_id: str = SCHEMA_ID


def lower_median(values: np.ndarray) -> float:
    """Median without interpolation: sorted[(n-1)//2]."""
    s = np.sort(values)
    return float(s[(len(s) - 1) // 2])


def compute_baseline(samples: Sequence[SensorSample], baseline_len: int) -> Baseline:
    """Median of the first baseline_len samples of each channel."""
    if len(samples) < baseline_len:
        raise ValueError(
            f"need {baseline_len} samples for the baseline, got {len(samples)}"
        )
    head = samples[:baseline_len]
    p = np.array([s.pressure for s in head], dtype=np.float64)
    m = np.array([s.mic for s in head], dtype=np.float64)
    return Baseline(pressure_med=lower_median(p), mic_med=lower_median(m))


def recording_arrays(rec: HugRecording) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    t = np.array([s.t for s in rec.samples], dtype=np.float64)
    p = np.array([s.pressure for s in rec.samples], dtype=np.float64)
    m = np.array([s.mic for s in rec.samples], dtype=np.float64)
    return t, p, m


def label_for_span(
    times: np.ndarray,
    annotations: Sequence[GestureInterval],
    threshold_fraction: float,
) -> GestureClass:
    """Label a window from per-sample interval coverage.

    A sample at time t is covered by an interval when t_start <= t < t_end.
    The window takes the class covering at least threshold_fraction of its
    samples; ties go to the larger coverage, then to the class whose earliest
    contributing interval starts first. Uncovered windows are HOLD.
    """
    w = len(times)
    counts: dict[GestureClass, int] = {}
    earliest: dict[GestureClass, float] = {}
    for iv in annotations:
        n = int(np.sum((times >= iv.t_start) & (times < iv.t_end)))
        if n == 0:
            continue
        counts[iv.label] = counts.get(iv.label, 0) + n
        if iv.label not in earliest or iv.t_start < earliest[iv.label]:
            earliest[iv.label] = iv.t_start
    best: GestureClass | None = None
    for cls in sorted(counts):  # fixed class order as the final tie-break
        if counts[cls] < threshold_fraction * w:
            continue
        if (
            best is None
            or counts[cls] > counts[best]
            or (counts[cls] == counts[best] and earliest[cls] < earliest[best])
        ):
            best = cls
    return GestureClass.HOLD if best is None else best


def segment(
    rec: HugRecording,
    params: EngineParams,
    baseline: Baseline | None = None,
) -> list[Window]:
    """Cut the hug span into overlapping labeled windows.

    Windows start at the first hug sample and advance by
    window_w - overlap_o; when no baseline is supplied it is computed from
    the first baseline_len hug samples.
    """
    i0, i1 = rec.hug_sample_range()
    n = i1 - i0
    w = params.window_w
    if n < w:
        raise ValueError(f"hug has {n} samples, shorter than one window of {w}")
    if baseline is None:
        baseline = compute_baseline(rec.samples[i0:i1], params.baseline_len)
    t, p, m = recording_arrays(rec)
    bp = p[i0:i1] - baseline.pressure_med
    bm = m[i0:i1] - baseline.mic_med
    th = t[i0:i1]
    out = []
    for off in range(0, n - w + 1, params.stride_offline):
        label = label_for_span(th[off : off + w], rec.annotations, params.label_threshold_t)
        out.append(
            Window(
                pressure=bp[off : off + w],
                mic=bm[off : off + w],
                start_index=off,
                label=label,
            )
        )
    return out


def _count_peaks(x: np.ndarray) -> float:
    if len(x) < 3:
        return 0.0
    mid = x[1:-1]
    return float(np.sum((mid > x[:-2]) & (mid > x[2:])))


def _base_stats(x: np.ndarray) -> list[float]:
    n = len(x)
    total = float(np.sum(x))
    mean = total / n
    dev = x - mean
    var = float(np.sum(dev * dev)) / n
    std = var ** 0.5
    s = np.sort(x)
    q1 = float(s[(n - 1) // 4])
    q3 = float(s[3 * (n - 1) // 4])
    auc = float(np.sum((x[:-1] + x[1:]) * 0.5)) if n > 1 else 0.0
    return [
        total,
        float(s[0]),
        float(s[-1]),
        mean,
        float(s[(n - 1) // 2]),
        std,
        var,
        _count_peaks(x),
        q3 - q1,
        auc,
    ]


def _extra_stats(x: np.ndarray) -> list[float]:
    n = len(x)
    sq = x * x
    energy = float(np.sum(sq))
    rms = (energy / n) ** 0.5
    mav = float(np.sum(np.abs(x))) / n
    ptp = float(np.max(x) - np.min(x))
    mean = float(np.sum(x)) / n
    dev = x - mean
    m2 = float(np.sum(dev * dev)) / n
    if m2 == 0.0:
        skew = 0.0
        kurt = 0.0
    else:
        m3 = float(np.sum(dev * dev * dev)) / n
        m4 = float(np.sum(dev * dev * dev * dev)) / n
        skew = m3 / m2 ** 1.5
        kurt = m4 / (m2 * m2) - 3.0
    zc = float(np.sum(x[:-1] * x[1:] < 0)) if n > 1 else 0.0
    above = float(np.sum(x > 0))
    return [rms, mav, ptp, skew, kurt, zc, energy, float(x[0]), float(x[-1]), above]


def extract_values(pressure: np.ndarray, mic: np.ndarray) -> np.ndarray:
    """The 80 registry values for one baseline-subtracted window."""
    p = np.asarray(pressure, dtype=np.float64)
    m = np.asarray(mic, dtype=np.float64)
    if len(p) != len(m) or len(p) < 3:
        raise ValueError("window channels must share a length of at least 3")
    streams = [p, np.diff(p), np.diff(p, n=2), m, np.diff(m), np.diff(m, n=2)]
    vals: list[float] = []
    for stream in streams:
        vals.extend(_base_stats(stream))
    for stream in (p, m):
        vals.extend(_extra_stats(stream))
    out = np.array(vals, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        bad = feature_names()[int(np.flatnonzero(~np.isfinite(out))[0])]
        raise ValueError(f"non-finite feature value: {bad}")
    return out


def extract(window: Window) -> FeatureVector:
    """Feature vector for one window; pure and deterministic."""
    return FeatureVector(values=extract_values(window.pressure, window.mic))
