"""Session runtime: 60 Hz ingestion feeding a 1 kHz tick pipeline.

The StreamingSession owns the full per-tick pipeline (validate, retarget,
estimate, IK, post-process, footstep execution, metrics) and is free of any
network or wall-clock dependency: inputs arrive through `ingest_envelope`,
time advances through an injected clock.  Live serving and file replay are
thin hosts around it, so simulated-clock replays are bitwise deterministic.

Concurrency contract: exactly one ingestion writer and one tick-loop reader.
They meet at the latest-value mailbox (lock-guarded single slot) and at the
pending footstep queue; everything else is owned by the tick loop.
"""

from __future__ import annotations

import itertools
import json
import math
import threading
import time
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .config import SessionConfig, resolve_model_path
from .estimation import (
    BodyEstimator,
    MotionInput,
    MotionTarget,
    estimator_on_input,
    estimator_predict,
    validate_input,
)
from .geometry import (
    Pose,
    Twist,
    quat_conjugate,
    quat_exp,
    quat_from_yaw_pitch_roll,
    quat_log,
    quat_mul,
    quat_yaw,
)
from .ik import AXES, IKState, MotionTask, axis_mask, build_support_polygon
from .ik import build_tasks as build_standard_tasks
from .ik import tick as ik_tick
from .model import (
    JointConfiguration,
    RobotModel,
    com_position,
    forward_kinematics,
    frame_pose_from_workspace,
    load_model,
    update_kinematics,
)
from .postprocess import JointSetpointFrame, PostProcessor
from .protocol import (
    ProtocolError,
    encode_envelope,
    error_payload,
    footstep_command_payload,
    make_envelope,
    model_summary_payload,
    parse_envelope,
    parse_footstep_command,
    parse_hello,
    parse_motion_input,
    parse_tracker_frame,
)
from .retarget import (
    CalibrationError,
    FootstepCommand,
    FootstepStreamState,
    RetargetingCalibration,
    TrackerBundle,
    footstep_stream_update,
    initialize_calibration,
    retarget_chest,
    retarget_com,
    retarget_hands,
    retarget_pelvis,
)

CONTROLLED_BODIES = ("left_hand", "right_hand", "chest", "pelvis")
RECORDING_VERSION = 1


# ------------------------------------------------------------------- clocks


class RealClock:
    """Wall time; sleeps to pace the tick loop."""

    def __init__(self):
        self._start = time.monotonic()

    def now(self) -> float:
        return time.monotonic() - self._start

    def sleep_until(self, deadline: float) -> None:
        remaining = deadline - self.now()
        if remaining > 0:
            time.sleep(remaining)


class SimClock:
    """Virtual time; advances only when told, sleeps are free."""

    def __init__(self):
        self._now = 0.0

    def now(self) -> float:
        return self._now

    def advance(self, dt: float) -> None:
        self._now += dt

    def sleep_until(self, deadline: float) -> None:
        if deadline > self._now:
            self._now = deadline


# ------------------------------------------------------------------ mailbox


class InputMailbox:
    """Single-slot latest-value handoff; writer overwrites, reader drains."""

    def __init__(self):
        self._lock = threading.Lock()
        self._slot = None               # (kind, value, t_arrival)
        self.overwrites = 0

    def put(self, kind: str, value, t_arrival: float) -> None:
        with self._lock:
            if self._slot is not None:
                self.overwrites += 1
            self._slot = (kind, value, t_arrival)

    def take(self):
        with self._lock:
            slot = self._slot
            self._slot = None
            return slot


# ------------------------------------------------------------------ metrics

# position axes each body's task set actually controls (world frame)
_TRACKED_POS_AXES = {
    "left_hand": (0, 1, 2),
    "right_hand": (0, 1, 2),
    "pelvis": (2,),
    "chest": (),
}


def _percentile(sorted_values, q: float) -> float:
    if not len(sorted_values):
        return 0.0
    return float(np.percentile(sorted_values, q))


@dataclass
class Metrics:
    tick_durations_us: list = field(default_factory=list)
    input_age_ms: list = field(default_factory=list)
    latency_ms: list = field(default_factory=list)
    qp_iterations: list = field(default_factory=list)
    qp_status: Counter = field(default_factory=Counter)
    rejections: Counter = field(default_factory=Counter)
    clamp_count: int = 0
    fault_count: int = 0
    overwrites: int = 0
    output_drops: int = 0
    overruns: int = 0
    frames_emitted: int = 0
    inputs_accepted: int = 0
    protocol_errors: int = 0
    tracking: dict = field(default_factory=dict)   # body -> list of trace rows

    def record_tracking(self, tick: int, body: str, inp: Pose, desired: Pose) -> None:
        # error columns cover the controlled subspace only: chest carries no
        # linear task and the pelvis linear task is height-only, so untasked
        # axes (which legitimately drift, e.g. walking forward under a held
        # pelvis target) must not pollute the headline error
        axes = _TRACKED_POS_AXES.get(body, (0, 1, 2))
        delta = inp.position - desired.position
        err_pos = float(np.linalg.norm(delta[list(axes)])) if axes else 0.0
        err_ang = float(np.linalg.norm(quat_log(
            quat_mul(quat_conjugate(desired.orientation), inp.orientation))))
        self.tracking.setdefault(body, []).append(
            (tick, *inp.position, *inp.orientation, *desired.position,
             *desired.orientation, err_pos, err_ang))

    def tracking_rms(self, body: str, after_tick: int = 0) -> tuple:
        rows = [r for r in self.tracking.get(body, ()) if r[0] >= after_tick]
        if not rows:
            return 0.0, 0.0
        pos = np.array([r[-2] for r in rows])
        ang = np.array([r[-1] for r in rows])
        return float(np.sqrt(np.mean(pos ** 2))), float(np.sqrt(np.mean(ang ** 2)))

    def snapshot(self) -> dict:
        ticks = np.asarray(self.tick_durations_us, dtype=float)
        lat = np.asarray(self.latency_ms, dtype=float)
        age = np.asarray(self.input_age_ms, dtype=float)
        iters = np.asarray(self.qp_iterations, dtype=float)
        out = {
            "frames_emitted": self.frames_emitted,
            "inputs_accepted": self.inputs_accepted,
            "tick_us": {"median": _percentile(ticks, 50), "p99": _percentile(ticks, 99),
                        "max": float(ticks.max()) if len(ticks) else 0.0},
            "latency_ms": {"median": _percentile(lat, 50), "p99": _percentile(lat, 99),
                           "max": float(lat.max()) if len(lat) else 0.0},
            "input_age_ms": {"median": _percentile(age, 50), "p99": _percentile(age, 99)},
            "qp": {"iterations_p99": _percentile(iters, 99),
                   "status": dict(self.qp_status)},
            "counters": {"clamp": self.clamp_count, "fault": self.fault_count,
                         "overwrites": self.overwrites, "output_drops": self.output_drops,
                         "overruns": self.overruns, "protocol_errors": self.protocol_errors,
                         "rejections": dict(self.rejections)},
        }
        for body in self.tracking:
            rp, ra = self.tracking_rms(body)
            out.setdefault("tracking_rms", {})[body] = {"pos_m": rp, "ang_rad": ra}
        return out

    def write_csv(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        header = ("tick,body,input_x,input_y,input_z,input_qw,input_qx,input_qy,input_qz,"
                  "desired_x,desired_y,desired_z,desired_qw,desired_qx,desired_qy,desired_qz,"
                  "error_pos_m,error_ang_rad")
        for body, rows in self.tracking.items():
            with open(directory / f"tracking_{body}.csv", "w", encoding="utf-8") as fh:
                fh.write(header + "\n")
                for r in rows:
                    fh.write(f"{r[0]},{body}," + ",".join(f"{x:.9g}" for x in r[1:]) + "\n")
        snap = self.snapshot()
        with open(directory / "summary.csv", "w", encoding="utf-8") as fh:
            fh.write("metric,value\n")
            def emit(prefix, obj):
                for key, value in obj.items():
                    if isinstance(value, dict):
                        emit(f"{prefix}{key}.", value)
                    else:
                        fh.write(f"{prefix}{key},{value}\n")
            emit("", snap)


# ---------------------------------------------------------------- recording


class Recorder:
    """Appends accepted raw input envelopes with arrival timestamps."""

    def __init__(self, path, mode: str, model_name: str, tick_rate: float):
        self._fh = open(path, "w", encoding="utf-8")
        header = {"recording_version": RECORDING_VERSION, "mode": mode,
                  "model": model_name, "tick_rate": tick_rate}
        self._fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        self._lock = threading.Lock()

    def append(self, t_arrival: float, envelope: dict) -> None:
        line = f"{t_arrival:.9f}\t{encode_envelope(envelope)}\n"
        with self._lock:
            self._fh.write(line)

    def close(self) -> None:
        with self._lock:
            self._fh.close()


def read_recording(path) -> tuple:
    """Returns (header dict, list of (t_arrival, envelope))."""
    events = []
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.strip():
            raise ValueError(f"{path}: empty recording")
        header = json.loads(first)
        if header.get("recording_version") != RECORDING_VERSION:
            raise ValueError(f"{path}: unsupported recording version "
                             f"{header.get('recording_version')!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                stamp, raw = line.split("\t", 1)
                events.append((float(stamp), parse_envelope(raw)))
            except (ValueError, ProtocolError) as exc:
                raise ValueError(f"{path}:{lineno}: bad recording line: {exc}") from exc
    return header, events


# ----------------------------------------------------------------- footsteps


@dataclass
class _ActiveSwing:
    side: str
    start: Pose
    goal: Pose
    t_start: float


class FootstepExecutor:
    """Kinematic swing interpolation between footstep commands.

    Position follows smoothstep with a parabolic height apex; yaw interpolates
    along the tangent.  At most one swing is active; completion returns the
    side so the session can rebuild stance-derived state.
    """

    MAX_QUEUE = 4

    def __init__(self, stance_left: Pose, stance_right: Pose,
                 swing_duration: float, apex: float):
        self.stance = {"left": stance_left.copy(), "right": stance_right.copy()}
        self.swing_duration = swing_duration
        self.apex = apex
        self.queue: deque = deque()
        self.active: Optional[_ActiveSwing] = None
        self.steps_completed = 0

    def submit(self, command: FootstepCommand) -> bool:
        if len(self.queue) >= self.MAX_QUEUE:
            return False
        self.queue.append(command)
        return True

    def update(self, now: float) -> Optional[str]:
        completed = None
        if self.active is not None:
            s = (now - self.active.t_start) / self.swing_duration
            if s >= 1.0:
                self.stance[self.active.side] = self.active.goal.copy()
                completed = self.active.side
                self.steps_completed += 1
                self.active = None
        if self.active is None and self.queue:
            cmd = self.queue.popleft()
            self.active = _ActiveSwing(cmd.side, self.stance[cmd.side].copy(),
                                       cmd.pose.copy(), now)
        return completed

    def foot_reference(self, side: str, now: float) -> Pose:
        sw = self.active
        if sw is None or sw.side != side:
            return self.stance[side]
        s = min(max((now - sw.t_start) / self.swing_duration, 0.0), 1.0)
        sigma = s * s * (3.0 - 2.0 * s)
        pos = (1.0 - sigma) * sw.start.position + sigma * sw.goal.position
        pos = pos.copy()
        pos[2] += self.apex * 4.0 * s * (1.0 - s)
        delta = quat_log(quat_mul(quat_conjugate(sw.start.orientation),
                                  sw.goal.orientation))
        quat = quat_mul(sw.start.orientation, quat_exp(sigma * delta))
        return Pose(pos, quat)


# ------------------------------------------------------------------ session


def _mid_feet_frame(left: Pose, right: Pose) -> Pose:
    position = 0.5 * (left.position + right.position)
    position = np.array([position[0], position[1], 0.0])
    yl, yr = quat_yaw(left.orientation), quat_yaw(right.orientation)
    yaw = math.atan2(0.5 * (math.sin(yl) + math.sin(yr)),
                     0.5 * (math.cos(yl) + math.cos(yr)))
    return Pose(position, quat_from_yaw_pitch_roll(yaw, 0.0, 0.0))


def initial_configuration(model: RobotModel, joint_overrides: dict) -> JointConfiguration:
    """Session start posture: named joint overrides, base dropped so the foot
    frames (sole planes) sit at z = 0."""
    q = model.default_configuration()
    qj = q.joint_positions.copy()
    for name, value in joint_overrides.items():
        idx = model.joint_index(name)
        qj[idx] = float(np.clip(value, model.q_min[idx], model.q_max[idx]))
    q = JointConfiguration(q.base_pose, qj)
    fk = forward_kinematics(model, q)
    drop = min(fk["left_foot"].position[2], fk["right_foot"].position[2])
    base = q.base_pose.copy()
    base.position[2] -= drop
    return JointConfiguration(base, qj)


DEFAULT_STANDING_POSTURE = {
    # knees carry enough bend that the pelvis has several cm of travel in
    # both directions before a leg reaches full extension
    "l_hip_pitch": -0.4, "l_knee_pitch": 0.8, "l_ankle_pitch": -0.4,
    "r_hip_pitch": -0.4, "r_knee_pitch": 0.8, "r_ankle_pitch": -0.4,
    # elbows carry a bend so the nominal pull steers clear of the
    # hyperextension-limit local minimum when hand targets come close
    "l_shoulder_pitch": 0.15, "l_elbow_pitch": -0.6,
    "r_shoulder_pitch": 0.15, "r_elbow_pitch": -0.6,
}


class StreamingSession:
    """Network-free pipeline host; see the module docstring for the contract."""

    def __init__(self, config: SessionConfig, clock=None,
                 recorder: Optional[Recorder] = None):
        config.validate()
        self.config = config
        self.model = load_model(resolve_model_path(config.model))
        self.clock = clock if clock is not None else RealClock()
        if recorder is None and config.record_path:
            recorder = Recorder(config.record_path, mode=config.mode,
                                model_name=config.model,
                                tick_rate=config.tick_rate)
        self.recorder = recorder
        self.dt = config.dt_tick

        overrides = dict(config.initial_joint_positions)
        if not overrides and config.model == "nadia_like":
            overrides = dict(DEFAULT_STANDING_POSTURE)
        self.initial_q = initial_configuration(self.model, overrides)
        self.ik_state = IKState.from_configuration(self.model, self.initial_q)
        update_kinematics(self.model, self.ik_state.q, self.ik_state.ws)
        if config.ik.q_nom is None:
            config.ik.q_nom = self.initial_q.joint_positions.copy()

        fk = forward_kinematics(self.model, self.initial_q)
        self.executor = FootstepExecutor(fk["left_foot"], fk["right_foot"],
                                         config.swing_duration, config.swing_apex)
        self.support = build_support_polygon(self.model, {
            "left_foot": fk["left_foot"], "right_foot": fk["right_foot"]})
        self.mid_feet = _mid_feet_frame(fk["left_foot"], fk["right_foot"])
        com0 = self._current_com_xy()
        self._com_offset_local = self._to_mid_feet_xy(com0)
        self.com_hold = com0.copy()

        self.post = PostProcessor(self.model, config.postprocess, self.initial_q, self.dt)
        self.estimators = {body: BodyEstimator(config.estimator)
                           for body in CONTROLLED_BODIES + ("com",)}
        self._last_accepted: Optional[MotionInput] = None
        self._last_tracker_input: Optional[MotionInput] = None
        self._last_retargeted: Optional[MotionInput] = None
        big = np.full(3, np.inf)
        self._tracker_limits = replace(config.safety, box_min=-big, box_max=big)
        self._last_input_ts: dict = {}
        self._latency_anchor: Optional[float] = None
        self._pending_trace: Optional[MotionInput] = None
        self.calibration: Optional[RetargetingCalibration] = None
        self.footstep_state: Optional[FootstepStreamState] = None

        self.mailbox = InputMailbox()
        self._pending_commands: list = []
        self._pending_lock = threading.Lock()
        self.metrics = Metrics()
        self.tick_index = 0
        self.now = 0.0
        self.on_frame: Optional[Callable[[JointSetpointFrame], None]] = None
        self.dump_qp_tick: Optional[int] = None
        self.dump_qp_path: Optional[str] = None
        self._seq = itertools.count(1)

    # -- helpers

    def _next_seq(self) -> int:
        # itertools.count is safe under concurrent reader threads
        return next(self._seq)

    def _emit_time(self) -> float:
        # sim runs own virtual time; real metrics use the wall clock
        return self.now if isinstance(self.clock, SimClock) else self.clock.now()

    def _current_com_xy(self) -> np.ndarray:
        com = com_position(self.model, self.ik_state.q)
        return np.array([com[0], com[1]])

    def _to_mid_feet_xy(self, world_xy: np.ndarray) -> np.ndarray:
        yaw = quat_yaw(self.mid_feet.orientation)
        c, s = math.cos(yaw), math.sin(yaw)
        d = world_xy - self.mid_feet.position[:2]
        return np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1]])

    def _from_mid_feet_xy(self, local_xy: np.ndarray) -> np.ndarray:
        yaw = quat_yaw(self.mid_feet.orientation)
        c, s = math.cos(yaw), math.sin(yaw)
        return self.mid_feet.position[:2] + np.array(
            [c * local_xy[0] - s * local_xy[1], s * local_xy[0] + c * local_xy[1]])

    def _frame_pose(self, name: str) -> Pose:
        return frame_pose_from_workspace(self.model, self.ik_state.ws, name)

    def _rebuild_stance_state(self) -> None:
        left, right = self.executor.stance["left"], self.executor.stance["right"]
        self.support = build_support_polygon(self.model, {
            "left_foot": left, "right_foot": right})
        self.mid_feet = _mid_feet_frame(left, right)
        self.com_hold = self._from_mid_feet_xy(self._com_offset_local)

    # -- ingestion (runs on the network/replay thread)

    def ingest_envelope(self, envelope: dict, t_arrival: float) -> list:
        """Parse and route one envelope; returns reply envelopes."""
        replies = []
        kind = envelope["type"]
        try:
            if kind == "hello":
                mode = parse_hello(envelope["payload"])
                if mode != self.config.mode:
                    raise ProtocolError(f"session runs in '{self.config.mode}' mode")
                replies.append(make_envelope("hello", self._next_seq(), t_arrival,
                                             {"mode": self.config.mode,
                                              "model": self.model.name,
                                              "tick_rate": self.config.tick_rate}))
            elif kind == "model_summary":
                replies.append(make_envelope("model_summary", self._next_seq(),
                                             t_arrival, model_summary_payload(self.model)))
            elif kind == "tracker_frame":
                if self.config.mode != "tracker_frame":
                    raise ProtocolError("session expects motion_input messages")
                bundle = parse_tracker_frame(envelope["payload"])
                if self.recorder is not None:
                    self.recorder.append(t_arrival, envelope)
                self.mailbox.put("tracker", bundle, t_arrival)
            elif kind == "motion_input":
                if self.config.mode != "motion_input":
                    raise ProtocolError("session expects tracker_frame messages")
                minput = parse_motion_input(envelope["payload"])
                if self.recorder is not None:
                    self.recorder.append(t_arrival, envelope)
                self.mailbox.put("motion", minput, t_arrival)
            elif kind == "footstep_command":
                command = parse_footstep_command(envelope["payload"])
                if self.recorder is not None:
                    self.recorder.append(t_arrival, envelope)
                with self._pending_lock:
                    accepted = len(self._pending_commands) < FootstepExecutor.MAX_QUEUE
                    if accepted:
                        self._pending_commands.append(command)
                ack = footstep_command_payload(command)
                ack["accepted"] = accepted
                replies.append(make_envelope("footstep_command_ack", self._next_seq(),
                                             t_arrival, ack))
            else:
                raise ProtocolError(f"unsupported message type '{kind}'")
        except ProtocolError as exc:
            self.metrics.protocol_errors += 1
            replies.append(make_envelope("error", self._next_seq(), t_arrival,
                                         error_payload(str(exc))))
        return replies

    def ingest_text(self, text: str, t_arrival: float) -> list:
        try:
            envelope = parse_envelope(text)
        except ProtocolError as exc:
            self.metrics.protocol_errors += 1
            return [make_envelope("error", self._next_seq(), t_arrival,
                                  error_payload(str(exc)))]
        return self.ingest_envelope(envelope, t_arrival)

    # -- tracker-mode retargeting

    def _retarget_bundle(self, bundle: TrackerBundle) -> Optional[MotionInput]:
        """Gate tracker poses for glitches, then build robot references from
        the survivors; the workspace box applies to the retargeted targets."""
        as_targets = MotionInput(bundle.timestamp, {
            name: MotionTarget(bundle.pose(name)) for name in (
                "headset", "controller_left", "controller_right",
                "chest", "waist", "ankle_left", "ankle_right")})
        # raw trackers live in operator space where walking is unbounded, so
        # only the teleport gates (rate, velocity) apply here
        checked, rejections = validate_input(as_targets, self._tracker_limits,
                                             Pose.identity(), self._last_tracker_input)
        for rej in rejections:
            self.metrics.rejections[f"tracker.{rej.body_id}.{rej.rule}"] += 1
        self._last_tracker_input = checked
        ok = set(checked.targets)

        if self.calibration is None:
            if ok.issuperset({"controller_left", "controller_right", "chest",
                              "waist", "ankle_left", "ankle_right"}):
                try:
                    self.calibration = initialize_calibration(bundle, self.model,
                                                              self.ik_state.q)
                    self.footstep_state = FootstepStreamState.from_bundle(bundle)
                except CalibrationError:
                    return None
            else:
                return None

        cal = self.calibration
        targets = {}
        if "waist" in ok:
            targets["pelvis"] = MotionTarget(
                retarget_pelvis(cal, bundle, scale_xy=self.config.pelvis_scale_xy))
        if "chest" in ok:
            chest_quat = retarget_chest(cal, bundle)
            # angular-only task; carry the live chest position for traces
            targets["chest"] = MotionTarget(Pose(self._frame_pose("chest").position.copy(),
                                                 chest_quat), linear_enabled=False)
        if {"controller_left", "controller_right"} <= ok:
            shoulders = (self._frame_pose("left_shoulder").position,
                         self._frame_pose("right_shoulder").position)
            hand_l, hand_r = retarget_hands(cal, bundle, shoulders)
            targets["left_hand"] = MotionTarget(hand_l)
            targets["right_hand"] = MotionTarget(hand_r)

        com_ground = None
        if {"waist", "ankle_left", "ankle_right"} <= ok:
            feet = (self.executor.stance["left"].position,
                    self.executor.stance["right"].position)
            hold3 = np.array([self.com_hold[0], self.com_hold[1], 0.0])
            com_ground = retarget_com(bundle, feet, fallback=hold3)[:2]

        if self.footstep_state is not None and {"ankle_left", "ankle_right"} <= ok:
            command = footstep_stream_update(
                self.footstep_state, bundle,
                (self.executor.stance["left"], self.executor.stance["right"]),
                self.config.footsteps)
            if command is not None:
                with self._pending_lock:
                    if len(self._pending_commands) < FootstepExecutor.MAX_QUEUE:
                        self._pending_commands.append(command)

        if not targets and com_ground is None:
            return None
        candidate = MotionInput(bundle.timestamp, targets, com_ground=com_ground)
        # retargeted robot-frame targets get the full workspace box check
        final, rejections = validate_input(candidate, self.config.safety,
                                           self.mid_feet, self._last_retargeted)
        for rej in rejections:
            self.metrics.rejections[f"retargeted.{rej.body_id}.{rej.rule}"] += 1
        self._last_retargeted = final
        return final

    # -- tick pipeline (runs on the tick loop)

    def _feed_estimator(self, body: str, pose: Pose, timestamp: float) -> None:
        prev_ts = self._last_input_ts.get(body)
        dt_input = (timestamp - prev_ts) if prev_ts is not None else 1.0 / self.config.input_rate
        estimator_on_input(self.estimators[body], pose, dt_input)
        self._last_input_ts[body] = timestamp

    def _consume_input(self) -> None:
        slot = self.mailbox.take()
        if slot is None:
            return
        kind, value, t_arrival = slot
        self.metrics.overwrites = self.mailbox.overwrites
        self.metrics.input_age_ms.append((self._emit_time() - t_arrival) * 1e3)
        if kind == "tracker":
            minput = self._retarget_bundle(value)
            if minput is None:
                return
        else:
            minput, rejections = validate_input(value, self.config.safety,
                                                self.mid_feet, self._last_accepted)
            for rej in rejections:
                self.metrics.rejections[f"{rej.body_id}.{rej.rule}"] += 1
        if not minput.targets and minput.com_ground is None:
            return
        self._last_accepted = minput
        self.metrics.inputs_accepted += 1
        self._latency_anchor = t_arrival

        for body, target in minput.targets.items():
            if body in self.estimators:
                self._feed_estimator(body, target.pose, minput.timestamp)
        if minput.com_ground is not None:
            com_pose = Pose(np.array([minput.com_ground[0], minput.com_ground[1], 0.0]))
            self._feed_estimator("com", com_pose, minput.timestamp)
        self._pending_trace = minput

    def _drain_footsteps(self) -> None:
        with self._pending_lock:
            pending, self._pending_commands = self._pending_commands, []
        for command in pending:
            self.executor.submit(command)

    def tick(self) -> JointSetpointFrame:
        t0 = time.perf_counter()
        self._consume_input()
        self._drain_footsteps()

        decay = self.config.estimator.decay_duration
        predictions = {}
        for body, est in self.estimators.items():
            predictions[body] = estimator_predict(est, self.dt, decay)

        tasks = build_standard_tasks(predictions, self.config.ik, self.com_hold)
        for side, frame in (("left", "left_foot"), ("right", "right_foot")):
            ref = self.executor.foot_reference(side, self.now)
            tasks.append(MotionTask("spatial_pose", frame, self.config.ik.weight_foot,
                                    self.config.ik.task_gain, axis_mask(*AXES),
                                    ref, Twist.zero()))

        if self.dump_qp_tick is not None and self.tick_index == self.dump_qp_tick:
            self._dump_qp(tasks)

        result = ik_tick(self.ik_state, self.model, tasks, self.config.ik, self.support)
        self.metrics.qp_status[result.stats.status] += 1
        self.metrics.qp_iterations.append(result.stats.iterations)
        self.metrics.clamp_count += result.stats.clamped_joints
        if result.stats.status == "infeasible":
            self.metrics.fault_count += 1

        frame = self.post.process(result.q, result.v_d, self.tick_index,
                                  self.now + self.dt)

        completed = self.executor.update(self.now + self.dt)
        if completed is not None:
            self._rebuild_stance_state()

        self.tick_index += 1
        self.now += self.dt
        self.metrics.frames_emitted += 1
        if self._latency_anchor is not None:
            self.metrics.latency_ms.append((self._emit_time() - self._latency_anchor) * 1e3)
            self._latency_anchor = None
        if self._pending_trace is not None:
            update_kinematics(self.model, self.ik_state.q, self.ik_state.ws)
            for body, target in self._pending_trace.targets.items():
                if body in CONTROLLED_BODIES:
                    self.metrics.record_tracking(self.tick_index, body, target.pose,
                                                 self._frame_pose(body))
            self._pending_trace = None
        self.metrics.tick_durations_us.append((time.perf_counter() - t0) * 1e6)
        if self.on_frame is not None:
            self.on_frame(frame)
        return frame

    def _dump_qp(self, tasks) -> None:
        from .ik import assemble_qp
        update_kinematics(self.model, self.ik_state.q, self.ik_state.ws)
        qp = assemble_qp(self.model, self.ik_state, tasks, self.config.ik, self.support)
        path = self.dump_qp_path or f"qp_tick{self.tick_index}.npz"
        np.savez(path, H=qp.H, g=qp.g, lb=qp.lb, ub=qp.ub, C=qp.C, d=qp.d,
                 warm=self.ik_state.v, tick=self.tick_index)

    def close(self) -> None:
        if self.recorder is not None:
            self.recorder.close()
            self.recorder = None


# ------------------------------------------------------------------- replay


def run_replay(config: SessionConfig, recording_path, speed: float = 1.0,
               sim_clock: bool = True, tail_s: float = 1.0,
               frame_sink: Optional[Callable] = None,
               dump_qp: Optional[tuple] = None) -> StreamingSession:
    """Feed a recording through a fresh session; returns the finished session.

    Simulated clock injects each input at its recorded arrival offset and is
    bitwise deterministic; real clock paces arrivals by wall time / speed.
    """
    if speed <= 0:
        raise ValueError("speed must be positive")
    header, events = read_recording(recording_path)
    if header.get("mode") != config.mode:
        raise ValueError(f"recording mode '{header.get('mode')}' does not match "
                         f"session mode '{config.mode}'")
    if header.get("model") != config.model:
        raise ValueError(f"recording model '{header.get('model')}' does not match "
                         f"session model '{config.model}'")

    clock = SimClock() if sim_clock else RealClock()
    session = StreamingSession(config, clock=clock)
    if dump_qp is not None:
        session.dump_qp_tick, session.dump_qp_path = dump_qp
    dt = session.dt

    if sim_clock:
        end = (events[-1][0] if events else 0.0) + tail_s
        idx = 0
        while session.now < end:
            while idx < len(events) and events[idx][0] <= session.now:
                session.ingest_envelope(events[idx][1], events[idx][0])
                idx += 1
            frame = session.tick()
            if frame_sink is not None:
                frame_sink(frame)
            clock.advance(0.0)  # virtual time owned by session.now
    else:
        idx = 0
        end = (events[-1][0] if events else 0.0) + tail_s
        next_tick = 0.0
        while session.now < end:
            now_wall = clock.now() * speed
            while idx < len(events) and events[idx][0] <= now_wall:
                session.ingest_envelope(events[idx][1], events[idx][0])
                idx += 1
            frame = session.tick()
            if frame_sink is not None:
                frame_sink(frame)
            next_tick += dt / speed
            clock.sleep_until(next_tick)
    session.close()
    return session
