"""Desk-scale closed-loop harness: scripted virtual users and a torque model.

The signal generators are parametric idealizations of the characteristic
chamber signatures: a squeeze raises chamber pressure to a smooth plateau
while rubbing does not, a pat produces sparse high-amplitude microphone
bursts, and a rub produces sustained moderate microphone activity. The
amplitudes are simulator knobs, not measured truths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .behave import ResponsePolicy, default_policy
from .core import (
    ConfigError,
    EngineParams,
    GestureClass,
    GestureInterval,
    HugRecording,
    SensorSample,
    make_recording,
)
from .detect import StreamDetector
from .forest import ForestModel, splitmix64_stream
from .height import HeightAverager, HeightCalib, HeightObservation, bbox_for_height, shoulder_angles
from .hugfsm import (
    CLOSING_JOINTS,
    HugSession,
    Joint,
    SessionConfig,
    SessionEvent,
    SessionState,
)


@dataclass(frozen=True)
class PlannedGesture:
    kind: GestureClass
    t_start: float            # seconds after the arms close
    duration: float
    intensity: float = 1.0
    with_squeeze: bool = False  # unannotated squeeze layered on a rub or pat


@dataclass(frozen=True)
class UserScript:
    height: float = 1.70                     # m, drives synthetic camera observations
    torso_circumference: float = 1.0         # m, drives the contact-torque model
    hug_plan: tuple[PlannedGesture, ...] = ()
    release_at: float = 10.0                 # s after the arms close
    seed: int = 0
    approach: tuple[HeightObservation, ...] = ()  # auto-generated when empty

    def violations(self) -> list[str]:
        out = []
        spans = sorted((g.t_start, g.t_start + g.duration, g.kind) for g in self.hug_plan)
        for (s0, e0, k0), (s1, e1, k1) in zip(spans, spans[1:]):
            if s1 < e0 and not (GestureClass.SQUEEZE in (k0, k1) and k0 != k1):
                out.append(f"gestures at {s0:.2f}s and {s1:.2f}s overlap")
        for g in self.hug_plan:
            if g.duration <= 0:
                out.append(f"gesture at {g.t_start:.2f}s has non-positive duration")
            if g.t_start + g.duration > self.release_at:
                out.append(f"gesture at {g.t_start:.2f}s runs past release_at")
        if self.release_at <= 0:
            out.append("release_at must be positive")
        return out


@dataclass(frozen=True)
class SignalModel:
    """Per-gesture chamber signature generators (amplitudes in sensor units)."""

    pressure_ambient: float = 1000.0
    mic_ambient: float = 512.0
    contact_rise: float = 10.0     # resting pressure added by the user's embrace
    squeeze_rise: float = 30.0     # plateau height above the embrace level
    squeeze_mic_amp: float = 3.0
    rub_mic_amp: float = 8.0
    pat_mic_amp: float = 40.0      # five times the rub amplitude
    pat_pressure_ripple: float = 2.0
    pat_rate_range: tuple[float, float] = (2.0, 4.0)   # bursts per second
    pressure_noise: float = 0.5
    mic_noise: float = 1.5
    contact_ramp: float = 0.3      # s, pressure rise/fall at hug start/end
    gesture_ramp: float = 0.4      # s, squeeze/rub envelope edges


def _trapezoid(t: np.ndarray, start: float, end: float, ramp: float) -> np.ndarray:
    up = np.clip((t - start) / ramp, 0.0, 1.0)
    down = np.clip((end - t) / ramp, 0.0, 1.0)
    return np.minimum(up, down)


def synthesize_hug_channels(
    t: np.ndarray,
    hug_start: float,
    release_at: float,
    plan: Sequence[PlannedGesture],
    model: SignalModel,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Pressure and mic streams for one hug; release_at is hug-relative."""
    rel = t - hug_start
    n = len(t)
    contact = _trapezoid(rel, 0.0, release_at, model.contact_ramp)
    pressure = (
        model.pressure_ambient
        + model.contact_rise * contact
        + model.pressure_noise * rng.standard_normal(n)
    )
    mic = model.mic_ambient + model.mic_noise * rng.standard_normal(n)
    dt = float(t[1] - t[0]) if n > 1 else 1.0 / 45.0
    for g in plan:
        env = _trapezoid(rel, g.t_start, g.t_start + g.duration, model.gesture_ramp)
        if g.kind is GestureClass.SQUEEZE or g.with_squeeze:
            pressure += model.squeeze_rise * g.intensity * env
            mic += model.squeeze_mic_amp * g.intensity * env * rng.standard_normal(n)
        if g.kind is GestureClass.RUB:
            mic += model.rub_mic_amp * g.intensity * env * rng.standard_normal(n)
        if g.kind is GestureClass.PAT:
            rate = rng.uniform(*model.pat_rate_range)
            burst_t = g.t_start
            mic_pattern = np.array([1.0, -0.8, 0.5]) * model.pat_mic_amp * g.intensity
            p_pattern = np.array([1.0, -0.7]) * model.pat_pressure_ripple * g.intensity
            while burst_t < g.t_start + g.duration:
                i = int(round((burst_t - rel[0]) / dt))
                for k, v in enumerate(mic_pattern):
                    if 0 <= i + k < n:
                        mic[i + k] += v
                for k, v in enumerate(p_pattern):
                    if 0 <= i + k < n:
                        pressure[i + k] += v
                burst_t += (1.0 / rate) * rng.uniform(0.85, 1.15)
    return pressure, mic


class VirtualRobot:
    """Contact-torque stand-in for the arms closing around a torso.

    Torque on a closing joint is zero before its contact angle and ramps
    linearly with penetration beyond it; a larger torso means contact comes
    at a smaller angle, so the embrace pose shrinks monotonically with
    circumference.
    """

    def __init__(
        self,
        torso_circumference: float,
        config: SessionConfig = SessionConfig(),
        stiffness: float = 2.0,          # Nm per degree of penetration
    ):
        self.stiffness = stiffness
        frac = min(max(1.55 - torso_circumference, 0.25), 0.95)
        goals = {
            Joint.LEFT_SHOULDER_FLEX: config.closing_goal_shoulder_flex,
            Joint.RIGHT_SHOULDER_FLEX: config.closing_goal_shoulder_flex,
            Joint.LEFT_ELBOW_FLEX: config.closing_goal_elbow_flex,
            Joint.RIGHT_ELBOW_FLEX: config.closing_goal_elbow_flex,
        }
        self.contact_angle = {j: goals[j] * frac for j in CLOSING_JOINTS}

    def torques(self, joints: Mapping[Joint, object]) -> dict[Joint, float]:
        out = {}
        for j in CLOSING_JOINTS:
            penetration = joints[j].angle - self.contact_angle[j]
            out[j] = self.stiffness * max(0.0, penetration)
        return out


def make_approach(
    height: float,
    n: int = 6,
    calib: HeightCalib = HeightCalib(),
    noise_px: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[HeightObservation, ...]:
    """Camera observations for a user walking in from 2.4 m."""
    distances = np.linspace(2.4, 1.2, n)
    out = []
    for d in distances:
        b = bbox_for_height(height, float(d), calib)
        if noise_px > 0 and rng is not None:
            b += noise_px * rng.standard_normal()
        out.append(HeightObservation(distance_d=float(d), bbox_height_b=float(b)))
    return tuple(out)


def run_session(
    script: UserScript,
    model: ForestModel,
    policy: ResponsePolicy | None = None,
    params: EngineParams = EngineParams(),
    policy_seed: int = 0,
    signal_model: SignalModel = SignalModel(),
    session_config: SessionConfig = SessionConfig(),
    calib: HeightCalib = HeightCalib(),
) -> tuple[list[SessionEvent], HugRecording]:
    """Drive one full session on a virtual clock; deterministic per seeds."""
    bad = script.violations()
    if bad:
        raise ValueError("; ".join(bad))
    policy = policy if policy is not None else default_policy()
    rng_signal = np.random.default_rng(script.seed)
    detector = StreamDetector(model, params)
    session = HugSession(
        params=params,
        policy=policy,
        rng=np.random.default_rng(policy_seed),
        config=session_config,
        on_hug_started=detector.hug_started,
    )
    session.set_ambient_pressure(signal_model.pressure_ambient)
    dt = 1.0 / params.sample_rate

    session.on_user_detected()
    averager = HeightAverager(calib)
    approach = script.approach or make_approach(script.height, calib=calib)
    estimate = None
    for obs in approach:
        session.tick(0.2)
        estimate = averager.push(obs)
    if estimate is not None:
        session.set_shoulder_lift(*shoulder_angles(estimate, calib))
    session.on_user_approaching()

    robot = VirtualRobot(script.torso_circumference, session_config)
    closing_deadline = session.now + 30.0
    while session.state is SessionState.CLOSING:
        session.tick(dt, robot.torques(session.joints))
        if session.now > closing_deadline:
            raise RuntimeError("virtual robot failed to close within 30 s")

    hug_start = session.now
    steady = robot.torques(session.joints)
    tail = signal_model.contact_ramp + 0.5
    n = int(math.ceil((script.release_at + tail) * params.sample_rate)) + 1
    t = hug_start + np.arange(n) * dt
    pressure, mic = synthesize_hug_channels(
        t, hug_start, script.release_at, script.hug_plan, signal_model, rng_signal
    )
    samples = []
    for k in range(n):
        sample = SensorSample(t=float(t[k]), pressure=float(pressure[k]), mic=float(mic[k]))
        samples.append(sample)
        session.tick(dt, steady)
        if session.state is SessionState.DONE:
            break
        detection = detector.push(sample)
        if detection is not None and session.state in (
            SessionState.EMBRACE,
            SessionState.RESPONDING_DISCRETE,
            SessionState.SQUEEZE_STATE,
            SessionState.TIMED_SQUEEZE,
        ):
            session.on_detection(detection)
        session.observe_pressure(float(pressure[k]))
    if session.state not in (SessionState.RELEASING, SessionState.DONE):
        # the scripted user is gone; make sure the session winds down even if
        # the pressure monitor never armed (e.g. a near-zero contact rise)
        session.on_pressure_release()
    guard = session.now + 10.0
    while session.state is not SessionState.DONE and session.now < guard:
        session.tick(dt, steady)

    annotations = tuple(
        GestureInterval(
            label=g.kind,
            t_start=hug_start + g.t_start,
            t_end=hug_start + g.t_start + g.duration,
        )
        for g in script.hug_plan
    )
    recording = make_recording(
        samples,
        annotations=annotations,
        hug_start=hug_start,
        hug_end=hug_start + script.release_at + signal_model.contact_ramp,
        participant_id="sim",
    )
    return session.events, recording


@dataclass(frozen=True)
class _UserFeel:
    pressure_ambient: float
    mic_ambient: float
    contact_rise: float
    intensity: float
    combiner: bool


def _user_feel(model: SignalModel, rng: np.random.Generator, combined_fraction: float) -> _UserFeel:
    return _UserFeel(
        pressure_ambient=model.pressure_ambient + rng.uniform(-30.0, 30.0),
        mic_ambient=model.mic_ambient + rng.uniform(-10.0, 10.0),
        contact_rise=rng.uniform(0.8, 1.4) * model.contact_rise,
        intensity=rng.uniform(0.8, 1.3),
        combiner=rng.random() < combined_fraction,
    )


def _plan_hug(
    cls: GestureClass,
    feel: _UserFeel,
    rng: np.random.Generator,
    params: EngineParams,
    combine_prob: float,
) -> tuple[tuple[PlannedGesture, ...], float]:
    """Episode plan and release time for one corpus hug."""
    settle = params.baseline_len / params.sample_rate + rng.uniform(0.6, 1.4)
    plan = []
    t = settle
    if cls is GestureClass.HOLD:
        t += rng.uniform(4.0, 8.0)
    else:
        for _ in range(int(rng.integers(1, 4))):
            duration = rng.uniform(1.6, 4.0 if cls is GestureClass.SQUEEZE else 3.2)
            layered = feel.combiner and cls is not GestureClass.SQUEEZE and rng.random() < combine_prob
            plan.append(
                PlannedGesture(
                    kind=cls,
                    t_start=t,
                    duration=duration,
                    intensity=feel.intensity * rng.uniform(0.9, 1.1),
                    with_squeeze=layered,
                )
            )
            t += duration + rng.uniform(0.9, 2.2)
    release_at = t + rng.uniform(0.8, 1.8)
    return tuple(plan), release_at


def generate_corpus(
    n_users: int,
    hugs_per_user: int,
    model: SignalModel = SignalModel(),
    seed: int = 0,
    params: EngineParams = EngineParams(),
    combined_user_fraction: float = 0.22,
    combine_prob: float = 0.4,
) -> list[HugRecording]:
    """Labeled synthetic recordings, classes balanced across each user's hugs."""
    if n_users < 1 or hugs_per_user < 1:
        raise ValueError("need at least one user and one hug per user")
    out = []
    user_seeds = splitmix64_stream(seed, n_users)
    for u in range(n_users):
        urng = np.random.default_rng(user_seeds[u])
        feel = _user_feel(model, urng, combined_user_fraction)
        user_model = replace(
            model,
            pressure_ambient=feel.pressure_ambient,
            mic_ambient=feel.mic_ambient,
            contact_rise=feel.contact_rise,
        )
        for h in range(hugs_per_user):
            cls = GestureClass(h % 4)
            plan, release_at = _plan_hug(cls, feel, urng, params, combine_prob)
            lead = 1.0
            dt = 1.0 / params.sample_rate
            tail = model.contact_ramp + 0.5
            n = int(math.ceil((lead + release_at + tail) * params.sample_rate)) + 1
            t = np.arange(n) * dt
            pressure, mic = synthesize_hug_channels(
                t, lead, release_at, plan, user_model, urng
            )
            annotations = tuple(
                GestureInterval(
                    label=g.kind,
                    t_start=lead + g.t_start,
                    t_end=lead + g.t_start + g.duration,
                )
                for g in plan
            )
            out.append(
                HugRecording(
                    samples=tuple(
                        SensorSample(t=float(t[k]), pressure=float(pressure[k]), mic=float(mic[k]))
                        for k in range(n)
                    ),
                    annotations=annotations,
                    hug_start=lead,
                    hug_end=lead + release_at + model.contact_ramp,
                    participant_id=f"u{u:03d}",
                )
            )
    return out


def parse_script(text: str) -> UserScript:
    """Parse the plain-text session script format.

    Scalar keys use ``key = value`` lines (height, torso_circumference,
    seed, release_at); each gesture line reads
    ``gesture = kind t_start duration [intensity] [+squeeze]``.
    """
    plan = []
    scalars: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "gesture":
            parts = value.split()
            if len(parts) < 3:
                raise ConfigError(f"line {lineno}: gesture needs kind t_start duration")
            kind = GestureClass.from_label(parts[0])
            layered = "+squeeze" in parts[3:]
            numeric = [p for p in parts[1:] if p != "+squeeze"]
            try:
                t_start, duration = float(numeric[0]), float(numeric[1])
                intensity = float(numeric[2]) if len(numeric) > 2 else 1.0
            except (ValueError, IndexError):
                raise ConfigError(f"line {lineno}: bad gesture numbers in {raw!r}") from None
            plan.append(
                PlannedGesture(
                    kind=kind, t_start=t_start, duration=duration,
                    intensity=intensity, with_squeeze=layered,
                )
            )
        else:
            scalars[key] = value
    kwargs: dict = {"hug_plan": tuple(plan)}
    converters = {
        "height": float,
        "torso_circumference": float,
        "release_at": float,
        "seed": int,
    }
    for key, value in scalars.items():
        if key not in converters:
            raise ConfigError(f"unknown script key {key!r}")
        try:
            kwargs[key] = converters[key](value)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r}") from None
    script = UserScript(**kwargs)
    bad = script.violations()
    if bad:
        raise ConfigError("; ".join(bad))
    return script
