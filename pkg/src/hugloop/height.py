"""User height estimation from camera geometry and arm-angle interpolation.

The camera sits parallel to the floor and cannot see the user's feet, so the
visible bounding-box height underestimates the body; a distance-proportional
correction recovers the full height:

    H = (D * b) / f - alpha * D + camera_h

Arm placement interpolates the left shoulder lift angle linearly between the
angles measured on a short and a tall model user, clamping outside that
range; the right arm rides a fixed offset above the left for inter-arm
spacing.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .core import ConfigError, parse_config_lines

AVERAGE_WINDOW = 5  # successive estimates in the smoothing mean


@dataclass(frozen=True)
class HeightObservation:
    distance_d: float      # meters from camera to user
    bbox_height_b: float   # pixels, detected person bounding box


@dataclass(frozen=True)
class HeightCalib:
    focal_f: float = 651.55      # px, depth camera focal length
    alpha: float = 0.5518        # occluded-height correction per meter
    camera_h: float = 1.73       # m, camera height above the floor
    h_min: float = 1.40          # m, short model user
    h_max: float = 1.93          # m, tall model user
    # Shoulder lift angles for the two model users are robot-specific
    # measurements; the defaults below are placeholders to be replaced by
    # calibration on the actual arms.
    theta_min: float = 30.0      # deg, left shoulder lift for h_min user
    theta_max: float = 60.0      # deg, left shoulder lift for h_max user
    right_offset: float = 20.0   # deg, right arm rides above the left

    def violations(self) -> list[str]:
        out = []
        if self.focal_f <= 0:
            out.append(f"calib_focal_f: need > 0, got {self.focal_f}")
        if self.h_min >= self.h_max:
            out.append(f"calib_h_min {self.h_min} must be below calib_h_max {self.h_max}")
        return out


_CALIB_FIELDS = {f.name for f in fields(HeightCalib)}


def load_calib(path: str | Path) -> HeightCalib:
    """Read the `calib_*` block of a config file; other keys are ignored."""
    mapping = parse_config_lines(Path(path).read_text())
    overrides = {}
    for key, value in mapping.items():
        if not key.startswith("calib_"):
            continue
        name = key[len("calib_"):]
        if name not in _CALIB_FIELDS:
            raise ConfigError(f"unknown calibration key {key!r}")
        try:
            overrides[name] = float(value)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r} as a number") from None
    calib = replace(HeightCalib(), **overrides)
    bad = calib.violations()
    if bad:
        raise ConfigError("; ".join(bad))
    return calib


def estimate_height(obs: HeightObservation, calib: HeightCalib = HeightCalib()) -> float:
    """Full user height in meters from one observation."""
    if obs.distance_d <= 0:
        raise ValueError(f"distance must be positive, got {obs.distance_d}")
    if obs.bbox_height_b < 0:
        raise ValueError(f"bounding-box height must be >= 0, got {obs.bbox_height_b}")
    return (
        (obs.distance_d * obs.bbox_height_b) / calib.focal_f
        - calib.alpha * obs.distance_d
        + calib.camera_h
    )


def bbox_for_height(height: float, distance: float, calib: HeightCalib = HeightCalib()) -> float:
    """Inverse of estimate_height: the bbox a user of this height projects."""
    return (height - calib.camera_h + calib.alpha * distance) * calib.focal_f / distance


class HeightAverager:
    """Sliding mean over the latest AVERAGE_WINDOW height estimates."""

    def __init__(self, calib: HeightCalib = HeightCalib()):
        self.calib = calib
        self._estimates: deque[float] = deque(maxlen=AVERAGE_WINDOW)

    def push(self, obs: HeightObservation) -> float | None:
        """Add one observation; returns the smoothed height once warm."""
        self._estimates.append(estimate_height(obs, self.calib))
        if len(self._estimates) < AVERAGE_WINDOW:
            return None
        return sum(self._estimates) / len(self._estimates)

    def reset(self) -> None:
        self._estimates.clear()


def averaged_height(
    observations,
    calib: HeightCalib = HeightCalib(),
) -> float:
    """Mean of the last AVERAGE_WINDOW estimates of an observation stream."""
    averager = HeightAverager(calib)
    result = None
    for obs in observations:
        result = averager.push(obs)
    if result is None:
        raise ValueError(f"need at least {AVERAGE_WINDOW} observations")
    return result


def shoulder_angles(height: float, calib: HeightCalib = HeightCalib()) -> tuple[float, float]:
    """(left, right) shoulder lift angles for a user of the given height.

    Heights outside the model-user range clamp to the nearer endpoint.
    """
    h = min(max(height, calib.h_min), calib.h_max)
    span = calib.h_max - calib.h_min
    theta_left = calib.theta_min + (h - calib.h_min) * (calib.theta_max - calib.theta_min) / span
    return theta_left, theta_left + calib.right_offset
