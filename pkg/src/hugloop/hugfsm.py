"""Hug-session state machine: invitation, torque-adaptive closing, gesture
responses (discrete, modal, proactive), and release logic.

The session is a single logical actor driven by three inputs: clock ticks
with joint torques, gesture detections, and chamber-pressure observations.
State rules worth calling out:

* Joint stops while closing use a 3-reading torque moving average (a full
  window is required, so an isolated spike cannot stop a joint), but hug
  release always acts on a single reading so the user is let out without
  filter delay.
* A timed squeeze is non-interruptible; release triggers that arrive during
  one are deferred and honored the moment it completes. The modal squeeze
  held in SQUEEZE_STATE stays interruptible.
* After a discrete response the session ignores new detections for the deaf
  window, so repeated detections of one long user gesture never queue a
  backlog of responses.
* Proactive gestures fire after a run of consecutive hold detections
  (params.proactive_hold_count, the detection-rate equivalent of
  params.proactive_delay); a wall-clock mode is available in the config.
"""

from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .behave import ResponsePolicy, choose
from .core import EngineParams, GestureClass
from .detect import Detection

# Gesture kinematics, in degrees relative to the embracing pose.
RUB_LIFT_DEG = 3.0            # left shoulder lift, up and back, twice
PAT_ELBOW_DEG = 3.0           # left elbow flexion tap amplitude
PAT_DELTAS = (3.0, -6.0, 6.0, -6.0, 3.0)
SQUEEZE_SHOULDER_DEG = 1.0    # both shoulder flexion joints inward
SQUEEZE_ELBOW_DEG = 3.0       # both elbow flexion joints inward


class Joint(enum.Enum):
    LEFT_SHOULDER_LIFT = "left_shoulder_lift"
    LEFT_SHOULDER_FLEX = "left_shoulder_flex"
    LEFT_ELBOW_FLEX = "left_elbow_flex"
    LEFT_WRIST = "left_wrist"
    RIGHT_SHOULDER_LIFT = "right_shoulder_lift"
    RIGHT_SHOULDER_FLEX = "right_shoulder_flex"
    RIGHT_ELBOW_FLEX = "right_elbow_flex"
    RIGHT_WRIST = "right_wrist"


CLOSING_JOINTS = (
    Joint.LEFT_SHOULDER_FLEX,
    Joint.RIGHT_SHOULDER_FLEX,
    Joint.LEFT_ELBOW_FLEX,
    Joint.RIGHT_ELBOW_FLEX,
)


class SessionState(enum.Enum):
    IDLE = "idle"
    INVITING = "inviting"
    CLOSING = "closing"
    EMBRACE = "embrace"
    RESPONDING_DISCRETE = "responding_discrete"
    SQUEEZE_STATE = "squeeze_state"
    TIMED_SQUEEZE = "timed_squeeze"
    RELEASING = "releasing"
    DONE = "done"


GESTURE_STATES = (
    SessionState.RESPONDING_DISCRETE,
    SessionState.SQUEEZE_STATE,
    SessionState.TIMED_SQUEEZE,
)


@dataclass
class JointState:
    name: Joint
    angle: float = 0.0
    torque: float = 0.0
    goal: float = 0.0
    stopped: bool = False


@dataclass(frozen=True)
class GestureCommand:
    """A joint-space motion: apply delta, wait dwell, in sequence."""

    kind: GestureClass
    waypoints: tuple[tuple[Joint, float, float], ...]
    duration: float
    blocking: bool = False

    def net_deltas(self) -> dict[Joint, float]:
        out: dict[Joint, float] = {}
        for joint, delta, _ in self.waypoints:
            out[joint] = out.get(joint, 0.0) + delta
        return out


@dataclass(frozen=True)
class SessionEvent:
    t: float
    kind: str      # detection | response_chosen | state_change | release_trigger | proactive_fired
    payload: dict


def events_to_jsonl(events) -> str:
    lines = [
        json.dumps({"t": e.t, "kind": e.kind, "payload": e.payload}, sort_keys=True)
        for e in events
    ]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SessionConfig:
    """Robot-specific knobs with no universal values; tune per platform."""

    closing_goal_shoulder_flex: float = 40.0   # deg, sized for the smallest user
    closing_goal_elbow_flex: float = 60.0
    closing_velocity: float = 15.0             # deg/s while closing or releasing
    embrace_torque_threshold: float = 12.0     # Nm, joint-stop moving average
    invite_lift: float = 25.0                  # deg, shoulder lift when inviting
    pressure_release_fraction: float = 0.02    # of peak embrace pressure rise
    min_embrace_rise: float = 5.0              # sensor units of rise before the
                                               # release monitor arms; must sit
                                               # well above sensor noise
    pressure_debounce: float = 0.0             # s; 0 releases on the first low reading
    release_duration: float = 1.6              # s for the arms to open
    proactive_mode: str = "detections"         # or "wallclock"
    per_joint_thresholds: Mapping[Joint, float] = field(default_factory=dict)

    def threshold_for(self, joint: Joint) -> float:
        return self.per_joint_thresholds.get(joint, self.embrace_torque_threshold)


def make_gesture(kind: GestureClass, duration: float = 2.0) -> GestureCommand:
    """Fixed-duration gesture command; every command is angle-neutral."""
    if kind == GestureClass.RUB:
        dwell = duration / 4.0
        wp = (
            (Joint.LEFT_SHOULDER_LIFT, RUB_LIFT_DEG, dwell),
            (Joint.LEFT_SHOULDER_LIFT, -RUB_LIFT_DEG, dwell),
            (Joint.LEFT_SHOULDER_LIFT, RUB_LIFT_DEG, dwell),
            (Joint.LEFT_SHOULDER_LIFT, -RUB_LIFT_DEG, dwell),
        )
        return GestureCommand(kind=kind, waypoints=wp, duration=duration)
    if kind == GestureClass.PAT:
        dwell = duration / len(PAT_DELTAS)
        wp = tuple((Joint.LEFT_ELBOW_FLEX, d, dwell) for d in PAT_DELTAS)
        return GestureCommand(kind=kind, waypoints=wp, duration=duration)
    if kind == GestureClass.SQUEEZE:
        half = duration / 2.0
        wp = (
            (Joint.LEFT_SHOULDER_FLEX, SQUEEZE_SHOULDER_DEG, 0.0),
            (Joint.RIGHT_SHOULDER_FLEX, SQUEEZE_SHOULDER_DEG, 0.0),
            (Joint.LEFT_ELBOW_FLEX, SQUEEZE_ELBOW_DEG, 0.0),
            (Joint.RIGHT_ELBOW_FLEX, SQUEEZE_ELBOW_DEG, half),
            (Joint.LEFT_SHOULDER_FLEX, -SQUEEZE_SHOULDER_DEG, 0.0),
            (Joint.RIGHT_SHOULDER_FLEX, -SQUEEZE_SHOULDER_DEG, 0.0),
            (Joint.LEFT_ELBOW_FLEX, -SQUEEZE_ELBOW_DEG, 0.0),
            (Joint.RIGHT_ELBOW_FLEX, -SQUEEZE_ELBOW_DEG, half),
        )
        return GestureCommand(kind=kind, waypoints=wp, duration=duration, blocking=True)
    raise ValueError(f"no motion command for gesture {kind.label}")


def squeeze_enter(ramp: float = 1.0) -> GestureCommand:
    """Tighten into the held (modal) squeeze; paired with squeeze_exit."""
    wp = (
        (Joint.LEFT_SHOULDER_FLEX, SQUEEZE_SHOULDER_DEG, 0.0),
        (Joint.RIGHT_SHOULDER_FLEX, SQUEEZE_SHOULDER_DEG, 0.0),
        (Joint.LEFT_ELBOW_FLEX, SQUEEZE_ELBOW_DEG, 0.0),
        (Joint.RIGHT_ELBOW_FLEX, SQUEEZE_ELBOW_DEG, ramp),
    )
    return GestureCommand(kind=GestureClass.SQUEEZE, waypoints=wp, duration=ramp)


def squeeze_exit(ramp: float = 1.0) -> GestureCommand:
    wp = (
        (Joint.LEFT_SHOULDER_FLEX, -SQUEEZE_SHOULDER_DEG, 0.0),
        (Joint.RIGHT_SHOULDER_FLEX, -SQUEEZE_SHOULDER_DEG, 0.0),
        (Joint.LEFT_ELBOW_FLEX, -SQUEEZE_ELBOW_DEG, 0.0),
        (Joint.RIGHT_ELBOW_FLEX, -SQUEEZE_ELBOW_DEG, ramp),
    )
    return GestureCommand(kind=GestureClass.SQUEEZE, waypoints=wp, duration=ramp)


class HugSession:
    """One hug interaction from invitation to release."""

    def __init__(
        self,
        params: EngineParams = EngineParams(),
        policy: ResponsePolicy | None = None,
        rng: np.random.Generator | None = None,
        config: SessionConfig = SessionConfig(),
        on_hug_started: Callable[[], None] | None = None,
    ):
        from .behave import default_policy

        self.params = params
        self.config = config
        self.policy = policy if policy is not None else default_policy()
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.on_hug_started = on_hug_started
        self.now = 0.0
        self.state = SessionState.IDLE
        self.events: list[SessionEvent] = []
        self.joints = {j: JointState(name=j) for j in Joint}
        self._torque_ma = {j: deque(maxlen=params.torque_ma_window) for j in CLOSING_JOINTS}
        self._deaf_until = 0.0
        self._squeeze_until = 0.0
        self._squeeze_deaf_until = 0.0
        self._layered_until: float | None = None
        self._releasing_until = 0.0
        self._release_pending: str | None = None
        self._hold_streak = 0
        self._hold_since: float | None = None
        self._ambient_pressure: float | None = None
        self._peak_rise = 0.0
        self._below_since: float | None = None
        self._schedule: list[tuple[float, Joint, float]] = []

    # -- logging ----------------------------------------------------------

    def _log(self, kind: str, **payload) -> None:
        self.events.append(SessionEvent(t=self.now, kind=kind, payload=payload))

    def _transition(self, new_state: SessionState, **payload) -> None:
        old = self.state
        self.state = new_state
        self._log("state_change", frm=old.value, to=new_state.value, **payload)
        if new_state is SessionState.EMBRACE:
            self._hold_streak = 0
            self._hold_since = self.now
        if old is SessionState.CLOSING and new_state is SessionState.EMBRACE:
            if self.on_hug_started is not None:
                self.on_hug_started()

    # -- hug initiation ----------------------------------------------------

    def on_user_detected(self) -> None:
        """A person entered the robot's personal space."""
        if self.state is not SessionState.IDLE:
            self._log("state_change", frm=self.state.value, to=self.state.value,
                      ignored="user_detected out of state")
            return
        for j in (Joint.LEFT_SHOULDER_LIFT, Joint.RIGHT_SHOULDER_LIFT):
            self.joints[j].angle = self.config.invite_lift
            self.joints[j].goal = self.config.invite_lift
        self._transition(SessionState.INVITING)

    def set_shoulder_lift(self, theta_left: float, theta_right: float) -> None:
        """Arm-height placement from the estimated user height."""
        self.joints[Joint.LEFT_SHOULDER_LIFT].angle = theta_left
        self.joints[Joint.LEFT_SHOULDER_LIFT].goal = theta_left
        self.joints[Joint.RIGHT_SHOULDER_LIFT].angle = theta_right
        self.joints[Joint.RIGHT_SHOULDER_LIFT].goal = theta_right

    def on_user_approaching(self) -> None:
        """The invited user started walking toward the robot.

        There is deliberately no invitation timeout: the robot waits as long
        as the user needs.
        """
        if self.state is not SessionState.INVITING:
            self._log("state_change", frm=self.state.value, to=self.state.value,
                      ignored="user_approaching out of state")
            return
        for j in (Joint.LEFT_SHOULDER_FLEX, Joint.RIGHT_SHOULDER_FLEX):
            self.joints[j].goal = self.config.closing_goal_shoulder_flex
        for j in (Joint.LEFT_ELBOW_FLEX, Joint.RIGHT_ELBOW_FLEX):
            self.joints[j].goal = self.config.closing_goal_elbow_flex
        self._transition(SessionState.CLOSING)

    # -- pressure-based release --------------------------------------------

    def set_ambient_pressure(self, pressure: float) -> None:
        """Chamber pressure before user contact; reference for hug release."""
        self._ambient_pressure = pressure
        self._peak_rise = 0.0
        self._below_since = None

    def observe_pressure(self, pressure: float) -> None:
        if self._ambient_pressure is None or self._release_pending is not None:
            return
        if self.state not in (SessionState.EMBRACE, *GESTURE_STATES):
            return
        rise = pressure - self._ambient_pressure
        if rise > self._peak_rise:
            self._peak_rise = rise
        if self._peak_rise < self.config.min_embrace_rise:
            return
        if rise <= self.config.pressure_release_fraction * self._peak_rise:
            if self._below_since is None:
                self._below_since = self.now
            if self.now - self._below_since >= self.config.pressure_debounce:
                self.on_pressure_release()
        else:
            self._below_since = None

    def on_pressure_release(self) -> None:
        """The user took their hands off the robot's back."""
        if self.state is SessionState.TIMED_SQUEEZE:
            if self._release_pending is None:
                self._release_pending = "pressure"
                self._log("release_trigger", cause="pressure", deferred=True)
            return
        if self.state in (SessionState.EMBRACE, SessionState.RESPONDING_DISCRETE,
                          SessionState.SQUEEZE_STATE):
            self._log("release_trigger", cause="pressure", deferred=False)
            self._begin_release()
        else:
            self._log("release_trigger", cause="pressure", ignored=True)

    def _begin_release(self) -> None:
        for j in CLOSING_JOINTS:
            self.joints[j].goal = 0.0
            self.joints[j].stopped = False
        self._schedule.clear()
        self._releasing_until = self.now + self.config.release_duration
        self._transition(SessionState.RELEASING)

    # -- clock -------------------------------------------------------------

    def tick(self, dt: float, torques: Mapping[Joint, float] | None = None) -> None:
        """Advance the session clock; apply motion, stops, and releases."""
        self.now += dt
        if torques:
            for joint, value in torques.items():
                self.joints[joint].torque = value
        self._apply_schedule()

        if self.state is SessionState.CLOSING:
            self._tick_closing(dt, torques or {})
        elif self.state is SessionState.RESPONDING_DISCRETE:
            if self.now >= self._deaf_until:
                self._transition(SessionState.EMBRACE)
        elif self.state is SessionState.TIMED_SQUEEZE:
            if self.now >= self._squeeze_until:
                if self._release_pending is not None:
                    cause = self._release_pending
                    self._release_pending = None
                    self._log("release_trigger", cause=cause, deferred=False, resumed=True)
                    self._begin_release()
                elif self.now >= self._squeeze_deaf_until:
                    self._transition(SessionState.EMBRACE)
                else:
                    self._deaf_until = self._squeeze_deaf_until
                    self._transition(SessionState.RESPONDING_DISCRETE, tail=True)
        elif self.state is SessionState.RELEASING:
            self._tick_releasing(dt)
            if self.now >= self._releasing_until:
                self._transition(SessionState.DONE)
        elif self.state is SessionState.EMBRACE:
            if (
                self.config.proactive_mode == "wallclock"
                and self._hold_since is not None
                and self.now - self._hold_since >= self.params.proactive_delay
            ):
                self.proactive_fire()

        if torques:
            self._check_torque_release(torques)

    def _tick_closing(self, dt: float, torques: Mapping[Joint, float]) -> None:
        done = True
        for joint in CLOSING_JOINTS:
            js = self.joints[joint]
            if joint in torques:
                self._torque_ma[joint].append(torques[joint])
                ma = self._torque_ma[joint]
                if (
                    not js.stopped
                    and len(ma) == self.params.torque_ma_window
                    and sum(ma) / len(ma) > self.config.threshold_for(joint)
                ):
                    js.stopped = True
                    js.goal = js.angle   # hold the stop angle as the new goal
            if not js.stopped and js.angle != js.goal:
                step = self.config.closing_velocity * dt
                delta = js.goal - js.angle
                js.angle += delta if abs(delta) <= step else step * np.sign(delta)
            if not js.stopped and abs(js.angle - js.goal) > 1e-9:
                done = False
        if done:
            self._transition(SessionState.EMBRACE)

    def _tick_releasing(self, dt: float) -> None:
        for joint in CLOSING_JOINTS:
            js = self.joints[joint]
            step = self.config.closing_velocity * dt
            delta = js.goal - js.angle
            if abs(delta) <= step:
                js.angle = js.goal
            else:
                js.angle += step * np.sign(delta)

    def _check_torque_release(self, torques: Mapping[Joint, float]) -> None:
        if self.state is SessionState.EMBRACE:
            threshold = self.params.torque_release_embrace
        elif self.state in GESTURE_STATES:
            threshold = self.params.torque_release_gesture
        else:
            return
        hot = [j for j, v in torques.items() if v > threshold]
        if not hot:
            return
        joint = hot[0]
        if self.state is SessionState.TIMED_SQUEEZE:
            if self._release_pending is None:
                self._release_pending = "torque"
                self._log("release_trigger", cause="torque", joint=joint.value,
                          value=torques[joint], deferred=True)
            return
        self._log("release_trigger", cause="torque", joint=joint.value,
                  value=torques[joint], deferred=False)
        self._begin_release()

    # -- motion schedule ----------------------------------------------------

    def _start_command(self, command: GestureCommand) -> None:
        t = self.now
        for joint, delta, dwell in command.waypoints:
            self._schedule.append((t, joint, delta))
            t += dwell
        self._apply_schedule()

    def _apply_schedule(self) -> None:
        remaining = []
        for t_apply, joint, delta in self._schedule:
            if t_apply <= self.now:
                self.joints[joint].angle += delta
            else:
                remaining.append((t_apply, joint, delta))
        self._schedule = remaining

    # -- detections ----------------------------------------------------------

    def on_detection(self, d: Detection) -> GestureCommand | None:
        """Route one gesture detection; may return a motion command."""
        if self.state is SessionState.EMBRACE:
            return self._detection_in_embrace(d)
        if self.state is SessionState.SQUEEZE_STATE:
            return self._detection_in_squeeze(d)
        acted_state = self.state in (SessionState.RESPONDING_DISCRETE, SessionState.TIMED_SQUEEZE)
        self._log(
            "detection",
            label=d.label.label,
            acted=False,
            reason="deaf_window" if acted_state else "not_embraced",
        )
        return None

    def _detection_in_embrace(self, d: Detection) -> GestureCommand | None:
        if d.label is GestureClass.HOLD:
            self._hold_streak += 1
            if self._hold_since is None:
                self._hold_since = self.now
            self._log("detection", label=d.label.label, acted=False, hold_streak=self._hold_streak)
            if (
                self.config.proactive_mode == "detections"
                and self._hold_streak >= self.params.proactive_hold_count
            ):
                return self.proactive_fire()
            return None
        self._hold_streak = 0
        self._hold_since = None
        self._log("detection", label=d.label.label, acted=True)
        response = choose(self.policy, d.label, self.rng)
        self._log(
            "response_chosen",
            action=d.label.label,
            response=response.label,
            layered=False,
            noop=response is GestureClass.HOLD,
        )
        if d.label is GestureClass.SQUEEZE and response is GestureClass.SQUEEZE:
            # modal squeeze: hold the tightened pose until the user stops
            cmd = squeeze_enter(self.params.gesture_duration / 2.0)
            self._start_command(cmd)
            self._layered_until = None
            self._transition(SessionState.SQUEEZE_STATE)
            return cmd
        return self._dispatch_response(response)

    def _detection_in_squeeze(self, d: Detection) -> GestureCommand | None:
        if d.label is GestureClass.SQUEEZE:
            self._log("detection", label=d.label.label, acted=False, reason="squeeze_held")
            return None
        if d.label is GestureClass.HOLD:
            # user released their squeeze: relax and return to the embrace
            self._log("detection", label=d.label.label, acted=True, reason="squeeze_exit")
            cmd = squeeze_exit(self.params.gesture_duration / 2.0)
            self._start_command(cmd)
            self._transition(SessionState.EMBRACE)
            return cmd
        if self._layered_until is not None and self.now < self._layered_until:
            self._log("detection", label=d.label.label, acted=False, reason="deaf_window")
            return None
        self._log("detection", label=d.label.label, acted=True)
        response = choose(self.policy, d.label, self.rng, in_squeeze_state=True)
        self._log(
            "response_chosen",
            action=d.label.label,
            response=response.label,
            layered=True,
            noop=response is GestureClass.HOLD,
        )
        if response is GestureClass.HOLD:
            return None
        self._layered_until = self.now + self.params.deaf_window
        cmd = make_gesture(response, self.params.gesture_duration)
        self._start_command(cmd)
        return cmd

    def _dispatch_response(self, response: GestureClass) -> GestureCommand | None:
        if response is GestureClass.HOLD:
            # the explicit no-op was already logged by the caller
            return None
        if response is GestureClass.SQUEEZE:
            cmd = make_gesture(GestureClass.SQUEEZE, self.params.gesture_duration)
            self._start_command(cmd)
            self._squeeze_until = self.now + self.params.gesture_duration
            self._squeeze_deaf_until = self.now + max(
                self.params.deaf_window, self.params.gesture_duration
            )
            self._transition(SessionState.TIMED_SQUEEZE)
            return cmd
        cmd = make_gesture(response, self.params.gesture_duration)
        self._start_command(cmd)
        self._deaf_until = self.now + self.params.deaf_window
        self._transition(SessionState.RESPONDING_DISCRETE)
        return cmd

    def proactive_fire(self) -> GestureCommand | None:
        """Unprompted gesture after sustained user holds."""
        if self.state is not SessionState.EMBRACE:
            self._log("proactive_fired", ignored="not embraced")
            return None
        response = choose(self.policy, GestureClass.HOLD, self.rng)
        self._log("proactive_fired", response=response.label)
        self._hold_streak = 0
        self._hold_since = self.now
        if response is GestureClass.HOLD:
            return None
        return self._dispatch_response(response)
