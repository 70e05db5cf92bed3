"""Streaming gesture detector: ring buffer, per-hug baseline, strided output.

The detector consumes one SensorSample at a time. After the session signals
that the hug has started, the first baseline_len samples set the per-hug
baseline; detection begins at the first full window after that and repeats
every stride_rt samples, classifying the most recent window_w samples.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import EngineParams, GestureClass, HugRecording, SensorSample
from .featurize import (
    Baseline,
    FeatureVector,
    Window,
    compute_baseline,
    extract,
    label_for_span,
    lower_median,
)
from .forest import ForestModel, predict


class DetectorError(Exception):
    pass


class Phase(enum.Enum):
    PRE_HUG = "pre_hug"
    BASELINING = "baselining"
    WARMUP = "warmup"
    ACTIVE = "active"


@dataclass(frozen=True)
class Detection:
    t: float
    label: GestureClass
    probabilities: np.ndarray    # 4 values summing to 1


class StreamDetector:
    """Single-writer stream processor bound to one trained model."""

    def __init__(self, model: ForestModel, params: EngineParams = EngineParams()):
        self.model = model
        self.params = params
        self.phase = Phase.PRE_HUG
        self.baseline: Baseline | None = None
        self._base_pressure: list[float] = []
        self._base_mic: list[float] = []
        self._pressure: deque[float] = deque(maxlen=params.window_w)
        self._mic: deque[float] = deque(maxlen=params.window_w)
        self._times: deque[float] = deque(maxlen=params.window_w)
        self._since_emit = 0
        self.last_features: FeatureVector | None = None  # set at each emission

    def reset(self) -> None:
        """Return to the pre-hug phase; the next hug needs a fresh baseline."""
        self.phase = Phase.PRE_HUG
        self.baseline = None
        self._base_pressure.clear()
        self._base_mic.clear()
        self._pressure.clear()
        self._mic.clear()
        self._times.clear()
        self._since_emit = 0
        self.last_features = None

    def hug_started(self) -> None:
        """Arms have closed around the user; begin collecting the baseline."""
        self.reset()
        self.phase = Phase.BASELINING

    def push(self, sample: SensorSample) -> Detection | None:
        if self.phase is Phase.PRE_HUG:
            raise DetectorError("push before hug_started()")
        if self.phase is Phase.BASELINING:
            self._base_pressure.append(sample.pressure)
            self._base_mic.append(sample.mic)
            if len(self._base_pressure) == self.params.baseline_len:
                self.baseline = Baseline(
                    pressure_med=lower_median(np.array(self._base_pressure)),
                    mic_med=lower_median(np.array(self._base_mic)),
                )
                self.phase = Phase.WARMUP
            return None
        self._pressure.append(sample.pressure - self.baseline.pressure_med)
        self._mic.append(sample.mic - self.baseline.mic_med)
        self._times.append(sample.t)
        if self.phase is Phase.WARMUP:
            if len(self._pressure) < self.params.window_w:
                return None
            self.phase = Phase.ACTIVE
            self._since_emit = 0
            return self._emit()
        self._since_emit += 1
        if self._since_emit >= self.params.stride_rt:
            self._since_emit = 0
            return self._emit()
        return None

    def _emit(self) -> Detection:
        window = Window(
            pressure=np.array(self._pressure, dtype=np.float64),
            mic=np.array(self._mic, dtype=np.float64),
            start_index=0,
        )
        fv = extract(window)
        self.last_features = fv
        label, probs = predict(self.model, fv)
        return Detection(t=self._times[-1], label=label, probabilities=probs)


def replay_recording(
    rec: HugRecording,
    model: ForestModel,
    params: EngineParams = EngineParams(),
) -> list[Detection]:
    """Stream every hug sample of a recording through a fresh detector."""
    det = StreamDetector(model, params)
    det.hug_started()
    i0, i1 = rec.hug_sample_range()
    out = []
    for sample in rec.samples[i0:i1]:
        d = det.push(sample)
        if d is not None:
            out.append(d)
    return out


def batch_windows_realtime(
    rec: HugRecording,
    params: EngineParams = EngineParams(),
) -> list[tuple[float, FeatureVector]]:
    """Offline twin of the streaming path: (timestamp, features) per emission.

    Windows cover the post-baseline stream at stride_rt; feature vectors are
    bit-equal to what the streaming detector computes on the same recording.
    """
    i0, i1 = rec.hug_sample_range()
    samples = rec.samples[i0:i1]
    b = params.baseline_len
    w = params.window_w
    if len(samples) < b:
        raise ValueError("recording shorter than the baseline period")
    baseline = compute_baseline(samples, b)
    post = samples[b:]
    t = np.array([s.t for s in post])
    p = np.array([s.pressure for s in post]) - baseline.pressure_med
    m = np.array([s.mic for s in post]) - baseline.mic_med
    out = []
    for off in range(0, len(post) - w + 1, params.stride_rt):
        window = Window(pressure=p[off : off + w], mic=m[off : off + w], start_index=off)
        out.append((float(t[off + w - 1]), extract(window)))
    return out


def realtime_truth_labels(
    rec: HugRecording,
    params: EngineParams = EngineParams(),
) -> list[GestureClass]:
    """Annotation-derived label for each window the streaming detector emits."""
    i0, i1 = rec.hug_sample_range()
    samples = rec.samples[i0 + params.baseline_len : i1]
    t = np.array([s.t for s in samples])
    w = params.window_w
    out = []
    for off in range(0, len(samples) - w + 1, params.stride_rt):
        out.append(label_for_span(t[off : off + w], rec.annotations, params.label_threshold_t))
    return out
