"""Setpoint conditioning between raw IK output and the emitted 1 kHz stream.

Four stages, each individually optional: velocity down-scaling, a PD feedback
integrator that turns (q_ik, v_ik) into a smooth (q_fb, qd_fb, qdd_fb) chain,
a first-order low-pass, and an initial blend that absorbs the discrepancy
between the robot's actual configuration and the stream at session start.

The emitted chain is self-consistent: every new frame satisfies
|Δq_fb| ≤ (|qd_fb| + |qdd_fb|·dt)·dt per joint, so consumers never see
teleports even across input dropouts or blend restarts.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import (
    Pose,
    Twist,
    integrate_pose,
    pose_error,
    quat_conjugate,
    quat_exp,
    quat_log,
    quat_mul,
)
from .model import JointConfiguration, JointVelocity, RobotModel


@dataclass
class PostProcessConfig:
    velocity_scale: float = 1.0        # [0,1] multiplier on IK velocity
    kp: float = 100.0                  # 1/s^2 proportional gain
    kd: float = 20.0                   # 1/s derivative gain
    lowpass_cutoff: float = 0.0        # Hz, 0 disables the filter
    lowpass_stage: str = "after_feedback"   # before_feedback | after_feedback
    blend_duration: float = 1.0        # s

    def validate(self) -> None:
        if not 0.0 <= self.velocity_scale <= 1.0:
            raise ValueError("velocity_scale must be in [0, 1]")
        if self.kp < 0 or self.kd < 0:
            raise ValueError("kp and kd must be >= 0")
        if self.lowpass_cutoff < 0:
            raise ValueError("lowpass_cutoff must be >= 0")
        if self.lowpass_stage not in ("before_feedback", "after_feedback"):
            raise ValueError(f"unknown lowpass_stage '{self.lowpass_stage}'")
        if self.blend_duration < 0:
            raise ValueError("blend_duration must be >= 0")
        if self.kp > 0 and self.kd * self.kd < 2.0 * self.kp:
            warnings.warn("kd^2 < 2*kp: feedback integrator is strongly underdamped",
                          stacklevel=2)


@dataclass
class JointSetpointFrame:
    """One 1 kHz output sample: joint chain plus floating-base setpoints."""

    base_pose: Pose
    base_twist: Twist
    base_accel: np.ndarray             # 6: angular (body), linear (world)
    q_fb: np.ndarray
    qd_fb: np.ndarray
    qdd_fb: np.ndarray
    tick_index: int = 0
    timestamp: float = 0.0

    def copy(self) -> "JointSetpointFrame":
        return JointSetpointFrame(self.base_pose.copy(), self.base_twist.copy(),
                                  self.base_accel.copy(), self.q_fb.copy(),
                                  self.qd_fb.copy(), self.qdd_fb.copy(),
                                  self.tick_index, self.timestamp)

    @staticmethod
    def at_rest(q: JointConfiguration) -> "JointSetpointFrame":
        nj = q.joint_positions.shape[0]
        return JointSetpointFrame(q.base_pose.copy(), Twist.zero(), np.zeros(6),
                                  q.joint_positions.copy(), np.zeros(nj), np.zeros(nj))


def downscale_velocity(v: JointVelocity, scale: float) -> JointVelocity:
    if not 0.0 <= scale <= 1.0:
        raise ValueError("scale must be in [0, 1]")
    return JointVelocity(Twist(scale * v.base_twist.angular, scale * v.base_twist.linear),
                         scale * v.joint_rates)


def feedback_integrate(frame: JointSetpointFrame, q_ik: JointConfiguration,
                       qd_ik: JointVelocity, config: PostProcessConfig,
                       dt: float) -> JointSetpointFrame:
    """One PD step toward (q_ik, qd_ik), semi-implicit (velocity before position)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    kp, kd = config.kp, config.kd
    qdd = kp * (q_ik.joint_positions - frame.q_fb) + kd * (qd_ik.joint_rates - frame.qd_fb)
    qd = frame.qd_fb + qdd * dt
    q = frame.q_fb + qd * dt

    err6 = pose_error(frame.base_pose, q_ik.base_pose)
    tw_fb = np.concatenate([frame.base_twist.angular, frame.base_twist.linear])
    tw_ik = np.concatenate([qd_ik.base_twist.angular, qd_ik.base_twist.linear])
    acc6 = kp * err6 + kd * (tw_ik - tw_fb)
    tw = tw_fb + acc6 * dt
    twist = Twist(tw[0:3], tw[3:6])
    base = integrate_pose(frame.base_pose, twist, dt)
    return JointSetpointFrame(base, twist, acc6, q, qd, qdd,
                              frame.tick_index, frame.timestamp)


def lowpass_beta(cutoff: float, dt: float) -> float:
    if cutoff <= 0:
        return 1.0
    return dt / (dt + 1.0 / (2.0 * math.pi * cutoff))


def lowpass(previous: np.ndarray, value: np.ndarray, cutoff: float, dt: float) -> np.ndarray:
    """First-order exponential filter; cutoff 0 passes the input through."""
    if cutoff <= 0:
        return np.asarray(value, dtype=float).copy()
    beta = lowpass_beta(cutoff, dt)
    return previous + beta * (np.asarray(value, dtype=float) - previous)


def lowpass_orientation(previous: np.ndarray, value: np.ndarray, cutoff: float,
                        dt: float) -> np.ndarray:
    """Filter a quaternion stream in the tangent space of the previous output."""
    if cutoff <= 0:
        return np.asarray(value, dtype=float).copy()
    beta = lowpass_beta(cutoff, dt)
    delta = quat_log(quat_mul(quat_conjugate(previous), value))
    return quat_mul(previous, quat_exp(beta * delta))


def smoothstep(s: float) -> float:
    s = min(max(s, 0.0), 1.0)
    return s * s * (3.0 - 2.0 * s)


def blend_initial(robot_actual: JointConfiguration, stream: JointSetpointFrame,
                  t_since_start: float, blend_duration: float) -> JointSetpointFrame:
    """Interpolate from the actual (stationary) configuration into the stream."""
    if t_since_start < 0:
        raise ValueError("t_since_start must be >= 0")
    if blend_duration <= 0:
        return stream.copy()
    sigma = smoothstep(t_since_start / blend_duration)
    if sigma >= 1.0:
        return stream.copy()
    q = (1.0 - sigma) * robot_actual.joint_positions + sigma * stream.q_fb
    pos = (1.0 - sigma) * robot_actual.base_pose.position + sigma * stream.base_pose.position
    qa = robot_actual.base_pose.orientation
    delta = quat_log(quat_mul(quat_conjugate(qa), stream.base_pose.orientation))
    quat = quat_mul(qa, quat_exp(sigma * delta))
    # the actual side is stationary, so derivative terms scale with sigma
    twist = Twist(sigma * stream.base_twist.angular, sigma * stream.base_twist.linear)
    return JointSetpointFrame(Pose(pos, quat), twist, sigma * stream.base_accel,
                              q, sigma * stream.qd_fb, sigma * stream.qdd_fb,
                              stream.tick_index, stream.timestamp)


class PostProcessor:
    """Per-session stage pipeline; carries PD, filter, blend, and emit state.

    The emitted frame's derivatives are re-derived by differencing the emitted
    position stream; in steady state (blend done, filter off) this reproduces
    the PD chain's own values exactly, and during blends or filtering it keeps
    the |Δq| ≤ (|qd|+|qdd|·dt)·dt continuity contract intact.
    """

    def __init__(self, model: RobotModel, config: PostProcessConfig,
                 initial: JointConfiguration, dt: float):
        config.validate()
        self.model = model
        self.config = config
        self.dt = dt
        self.frame = JointSetpointFrame.at_rest(initial)
        self.blend_anchor = initial.copy()
        self.blend_elapsed = 0.0
        self.emitted = JointSetpointFrame.at_rest(initial)
        self._filt: JointSetpointFrame | None = None
        self._pre_q: JointConfiguration | None = None
        self._pre_v: JointVelocity | None = None
        self.clamp_count = 0

    def restart_blend(self) -> None:
        """Re-anchor blending at the last emitted frame (stream restart, reconnect)."""
        self.blend_anchor = JointConfiguration(self.emitted.base_pose.copy(),
                                               self.emitted.q_fb.copy())
        self.blend_elapsed = 0.0

    def _prefilter(self, q_ik: JointConfiguration, v: JointVelocity):
        cutoff, dt = self.config.lowpass_cutoff, self.dt
        if self._pre_q is None:
            self._pre_q = q_ik.copy()
            self._pre_v = v
            return q_ik, v
        pos = lowpass(self._pre_q.base_pose.position, q_ik.base_pose.position, cutoff, dt)
        quat = lowpass_orientation(self._pre_q.base_pose.orientation,
                                   q_ik.base_pose.orientation, cutoff, dt)
        qj = lowpass(self._pre_q.joint_positions, q_ik.joint_positions, cutoff, dt)
        tw = Twist(lowpass(self._pre_v.base_twist.angular, v.base_twist.angular, cutoff, dt),
                   lowpass(self._pre_v.base_twist.linear, v.base_twist.linear, cutoff, dt))
        rates = lowpass(self._pre_v.joint_rates, v.joint_rates, cutoff, dt)
        self._pre_q = JointConfiguration(Pose(pos, quat), qj)
        self._pre_v = JointVelocity(tw, rates)
        return self._pre_q, self._pre_v

    def _postfilter(self, frame: JointSetpointFrame) -> JointSetpointFrame:
        """Filter the position-level stream; derivatives are rebuilt at emit."""
        cutoff, dt = self.config.lowpass_cutoff, self.dt
        prev = self._filt
        if prev is None:
            self._filt = frame.copy()
            return self._filt
        pos = lowpass(prev.base_pose.position, frame.base_pose.position, cutoff, dt)
        quat = lowpass_orientation(prev.base_pose.orientation,
                                   frame.base_pose.orientation, cutoff, dt)
        qj = lowpass(prev.q_fb, frame.q_fb, cutoff, dt)
        self._filt = JointSetpointFrame(Pose(pos, quat), frame.base_twist.copy(),
                                        frame.base_accel.copy(), qj,
                                        frame.qd_fb.copy(), frame.qdd_fb.copy(),
                                        frame.tick_index, frame.timestamp)
        return self._filt

    def process(self, q_ik: JointConfiguration, v_ik: JointVelocity,
                tick_index: int, timestamp: float) -> JointSetpointFrame:
        cfg = self.config
        dt = self.dt
        v = downscale_velocity(v_ik, cfg.velocity_scale)
        if cfg.lowpass_cutoff > 0 and cfg.lowpass_stage == "before_feedback":
            q_ik, v = self._prefilter(q_ik, v)
        self.frame = feedback_integrate(self.frame, q_ik, v, cfg, dt)
        self.frame.tick_index = tick_index
        self.frame.timestamp = timestamp
        out = self.frame
        if cfg.lowpass_cutoff > 0 and cfg.lowpass_stage == "after_feedback":
            out = self._postfilter(out)
        out = blend_initial(self.blend_anchor, out, self.blend_elapsed,
                            cfg.blend_duration)
        if out is self.frame or out is self._filt:
            out = out.copy()
        self.blend_elapsed += dt

        qmin, qmax = self.model.q_min, self.model.q_max
        bad = (out.q_fb < qmin) | (out.q_fb > qmax)
        if bad.any():
            np.clip(out.q_fb, qmin, qmax, out=out.q_fb)
            self.clamp_count += int(bad.sum())

        prev = self.emitted
        tw6 = pose_error(prev.base_pose, out.base_pose) / dt
        prev_tw6 = np.concatenate([prev.base_twist.angular, prev.base_twist.linear])
        out.base_twist = Twist(tw6[0:3].copy(), tw6[3:6].copy())
        out.base_accel = (tw6 - prev_tw6) / dt
        out.qd_fb = (out.q_fb - prev.q_fb) / dt
        out.qdd_fb = (out.qd_fb - prev.qd_fb) / dt
        self.emitted = out.copy()
        return out
