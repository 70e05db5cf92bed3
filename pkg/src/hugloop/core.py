"""Domain types, gesture enumeration, and the tunable-parameter ledger.

Every numeric constant that the rest of the engine depends on lives in
:class:`EngineParams` so that experiments can override it from one config
file and so no other module hardcodes a magic number.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Iterable


class ConfigError(Exception):
    """Raised when a config file cannot be parsed or violates an invariant."""


class GestureClass(enum.IntEnum):
    """The four touch gestures.

    The integer ordering (HOLD < RUB < PAT < SQUEEZE) is fixed: it indexes
    probability vectors and confusion matrices and breaks prediction ties,
    so it must never change.
    """

    HOLD = 0
    RUB = 1
    PAT = 2
    SQUEEZE = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, text: str) -> "GestureClass":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown gesture class: {text!r}") from None


N_CLASSES = len(GestureClass)

ACTIVE_GESTURES = (GestureClass.RUB, GestureClass.PAT, GestureClass.SQUEEZE)


@dataclass(frozen=True)
class SensorSample:
    """One reading from the torso chamber: timestamp, pressure, microphone.

    Units are raw sensor counts; the pipeline is unit-agnostic because a
    per-hug baseline is subtracted before any feature is computed.
    """

    t: float        # seconds, relative to stream start, strictly increasing
    pressure: float
    mic: float


@dataclass(frozen=True)
class GestureInterval:
    """A labeled time span within one recording."""

    label: GestureClass
    t_start: float
    t_end: float


@dataclass(frozen=True)
class HugRecording:
    """A full sensor stream for one hug plus its gesture annotations."""

    samples: tuple[SensorSample, ...]
    annotations: tuple[GestureInterval, ...]
    hug_start: float
    hug_end: float
    participant_id: str

    def hug_sample_range(self) -> tuple[int, int]:
        """Index range [i0, i1) of samples with hug_start <= t <= hug_end."""
        i0 = 0
        n = len(self.samples)
        while i0 < n and self.samples[i0].t < self.hug_start:
            i0 += 1
        i1 = n
        while i1 > i0 and self.samples[i1 - 1].t > self.hug_end:
            i1 -= 1
        return i0, i1


# Per test acceptance, the engine defaults below are the deployed operating
# point; the comments state the role of each knob, not its provenance.
@dataclass(frozen=True)
class EngineParams:
    """All tunable constants of the perception/response engine."""

    window_w: int = 50              # samples per feature window
    overlap_o: int = 37             # window overlap during offline segmentation
    label_threshold_t: float = 0.75  # fraction of a window a gesture must cover
    stride_rt: int = 10             # streaming detector emits every N samples
    baseline_len: int = 150         # samples used for the per-hug median baseline
    sample_rate: float = 45.0       # Hz, nominal chamber sensor rate
    eta: float = 5.0                # neutral rating; at or below never selected
    m_exponent: float = 3.0         # sharpening power for response probabilities
    deaf_window: float = 2.5        # s, detections ignored after a discrete response
    proactive_delay: float = 1.5    # s of sustained hold before a proactive gesture
    torque_release_embrace: float = 20.0   # Nm, single-reading release threshold
    torque_release_gesture: float = 40.0   # Nm, release threshold while gesturing
    torque_ma_window: int = 3       # readings in the joint-stop moving average
    gesture_duration: float = 2.0   # s, fixed duration of discrete robot gestures

    def violations(self) -> list[str]:
        out = []
        if not (0 < self.overlap_o < self.window_w):
            out.append(
                f"overlap_o: need 0 < overlap_o < window_w, "
                f"got overlap_o={self.overlap_o} window_w={self.window_w}"
            )
        if not (0 < self.label_threshold_t <= 1):
            out.append(f"label_threshold_t: need 0 < t <= 1, got {self.label_threshold_t}")
        if self.stride_rt < 1:
            out.append(f"stride_rt: need >= 1, got {self.stride_rt}")
        if self.m_exponent <= 0:
            out.append(f"m_exponent: need > 0, got {self.m_exponent}")
        if self.window_w < 3:
            out.append(f"window_w: need >= 3, got {self.window_w}")
        if self.baseline_len < 1:
            out.append(f"baseline_len: need >= 1, got {self.baseline_len}")
        if self.sample_rate <= 0:
            out.append(f"sample_rate: need > 0, got {self.sample_rate}")
        if self.torque_ma_window < 1:
            out.append(f"torque_ma_window: need >= 1, got {self.torque_ma_window}")
        return out

    @property
    def stride_offline(self) -> int:
        return self.window_w - self.overlap_o

    @property
    def proactive_hold_count(self) -> int:
        """Consecutive hold detections equivalent to proactive_delay seconds."""
        import math

        return max(1, math.ceil(self.proactive_delay * self.sample_rate / self.stride_rt))


_PARAM_FIELDS = {f.name: f.type for f in fields(EngineParams)}
_INT_FIELDS = {name for name, tp in _PARAM_FIELDS.items() if tp == "int"}


def parse_config_lines(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment, blanks are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value in {raw!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def params_from_mapping(mapping: dict[str, str]) -> EngineParams:
    overrides = {}
    for key, value in mapping.items():
        if key.startswith("calib_"):
            continue  # height-calibration block, parsed by the height module
        if key not in _PARAM_FIELDS:
            raise ConfigError(f"unknown parameter {key!r}")
        try:
            overrides[key] = int(value) if key in _INT_FIELDS else float(value)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r} as a number") from None
    params = replace(EngineParams(), **overrides)
    bad = params.violations()
    if bad:
        raise ConfigError("; ".join(bad))
    return params


def load_params(path: str | Path) -> EngineParams:
    """Load engine parameters from a config file; absent keys keep defaults."""
    text = Path(path).read_text()
    return params_from_mapping(parse_config_lines(text))


def save_params(params: EngineParams, path: str | Path) -> None:
    lines = [f"{f.name} = {getattr(params, f.name)!r}" for f in fields(EngineParams)]
    Path(path).write_text("\n".join(lines) + "\n")


def validate_recording(rec: HugRecording) -> list[str]:
    """Return a list of invariant violations; empty means the recording is sound."""
    out: list[str] = []
    prev = None
    for k, s in enumerate(rec.samples):
        if prev is not None and s.t <= prev:
            out.append(f"sample {k}: timestamp {s.t} not strictly increasing (prev {prev})")
        prev = s.t
    if rec.hug_start > rec.hug_end:
        out.append(f"hug_start {rec.hug_start} exceeds hug_end {rec.hug_end}")
    spans = []
    for k, iv in enumerate(rec.annotations):
        if iv.t_start >= iv.t_end:
            out.append(
                f"annotation {k} ({iv.label.label}): t_start {iv.t_start} >= t_end {iv.t_end}"
            )
            continue
        if iv.t_start < rec.hug_start or iv.t_end > rec.hug_end:
            out.append(
                f"annotation {k} ({iv.label.label}): [{iv.t_start}, {iv.t_end}] "
                f"outside hug span [{rec.hug_start}, {rec.hug_end}]"
            )
        spans.append((iv.t_start, iv.t_end, k))
    spans.sort()
    for (s0, e0, k0), (s1, e1, k1) in zip(spans, spans[1:]):
        if s1 < e0:
            out.append(f"annotations {k0} and {k1} overlap")
    return out


def make_recording(
    samples: Iterable[SensorSample],
    annotations: Iterable[GestureInterval] = (),
    hug_start: float | None = None,
    hug_end: float | None = None,
    participant_id: str = "anon",
) -> HugRecording:
    """Convenience constructor; hug span defaults to the full sample span."""
    samples = tuple(samples)
    if not samples:
        raise ValueError("recording needs at least one sample")
    return HugRecording(
        samples=samples,
        annotations=tuple(annotations),
        hug_start=samples[0].t if hug_start is None else hug_start,
        hug_end=samples[-1].t if hug_end is None else hug_end,
        participant_id=participant_id,
    )
