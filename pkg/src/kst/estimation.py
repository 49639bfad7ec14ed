"""Input validation and per-body state estimation between low-rate inputs.

Inputs arrive at ~60 Hz; the IK tick runs at 1 kHz.  Each controlled body
carries a small estimator that turns the latest two accepted inputs into a
velocity estimate and extrapolates the desired pose every tick, fading the
velocity linearly to zero while no fresh input arrives.  Two modes:

* ``first_order``: the estimated pose snaps to each input and coasts on the
  finite-difference velocity.
* ``feedback``: the estimated pose is never snapped; a correction velocity
  (pose error over T_corr) steers it toward the newest input, keeping the
  stream continuous through jittery or dropped inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import (
    Pose,
    Twist,
    integrate_pose,
    quat_conjugate,
    quat_log,
    quat_mul,
)

DT_INPUT_MIN = 0.005   # clamp window for finite-difference intervals
DT_INPUT_MAX = 0.100


@dataclass
class MotionTarget:
    pose: Pose
    linear_enabled: bool = True
    angular_enabled: bool = True


@dataclass
class MotionInput:
    """One pre-retargeted input message: desired poses per controlled body."""

    timestamp: float
    targets: dict                      # body_id -> MotionTarget
    com_ground: Optional[np.ndarray] = None
    chest_orientation: Optional[np.ndarray] = None


@dataclass
class SafetyLimits:
    """Workspace box is axis-aligned in the mid-feet frame."""

    box_min: np.ndarray = field(default_factory=lambda: np.array([-1.2, -1.2, 0.0]))
    box_max: np.ndarray = field(default_factory=lambda: np.array([1.2, 1.2, 2.2]))
    max_rate_linear: float = 0.1       # m per input interval
    max_rate_angular: float = 0.7      # rad per input interval
    max_velocity_linear: float = 3.0   # m/s
    max_velocity_angular: float = 20.0


@dataclass
class InputRejection:
    body_id: str
    rule: str               # bounding_box | rate | velocity
    measured: float


def validate_input(minput: MotionInput, limits: SafetyLimits, mid_feet_frame: Pose,
                   previous: Optional[MotionInput] = None):
    """Filter one input against the safety limits.

    Violating targets are dropped individually; surviving targets are returned
    in a new MotionInput alongside the rejection records.  Rate and velocity
    are measured against the previous *accepted* input.
    """
    accepted: dict = {}
    rejections: list = []
    dt = None
    if previous is not None:
        dt = minput.timestamp - previous.timestamp
        if dt <= 0.0:
            dt = None
    for body, target in minput.targets.items():
        local = mid_feet_frame.inverse_transform_point(target.pose.position)
        outside = np.maximum(limits.box_min - local, local - limits.box_max)
        worst = float(outside.max())
        if worst > 0.0:
            rejections.append(InputRejection(body, "bounding_box", worst))
            continue
        prev_t = previous.targets.get(body) if previous is not None else None
        if prev_t is not None:
            dp = float(np.linalg.norm(target.pose.position - prev_t.pose.position))
            dw = float(np.linalg.norm(quat_log(
                quat_mul(quat_conjugate(prev_t.pose.orientation), target.pose.orientation))))
            if dp > limits.max_rate_linear or dw > limits.max_rate_angular:
                rejections.append(InputRejection(body, "rate", max(dp, dw)))
                continue
            if dt is not None:
                if dp / dt > limits.max_velocity_linear or dw / dt > limits.max_velocity_angular:
                    rejections.append(InputRejection(body, "velocity", max(dp, dw) / dt))
                    continue
        accepted[body] = target
    out = MotionInput(minput.timestamp, accepted, None, minput.chest_orientation)
    if minput.com_ground is not None:
        com = np.asarray(minput.com_ground, dtype=float)
        prev_com = previous.com_ground if previous is not None else None
        drop = False
        if prev_com is not None:
            dp = float(np.linalg.norm(com - prev_com))
            if dp > limits.max_rate_linear:
                rejections.append(InputRejection("com", "rate", dp))
                drop = True
            elif dt is not None and dp / dt > limits.max_velocity_linear:
                rejections.append(InputRejection("com", "velocity", dp / dt))
                drop = True
        if not drop:
            out.com_ground = com
    return out, rejections


@dataclass
class EstimatorParams:
    mode: str = "feedback"             # feedback | first_order
    correction_duration: float = 0.05  # T_corr, s
    decay_duration: float = 0.25       # velocity ramp-to-zero horizon, s


@dataclass
class BodyEstimator:
    """Estimator state for one controlled body (see module docstring)."""

    params: EstimatorParams
    last_input: Pose = field(default_factory=Pose)
    estimated: Pose = field(default_factory=Pose)
    v_fd: np.ndarray = field(default_factory=lambda: np.zeros(3))
    w_fd: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v_corr: np.ndarray = field(default_factory=lambda: np.zeros(3))
    w_corr: np.ndarray = field(default_factory=lambda: np.zeros(3))
    alpha_timer: float = float("inf")  # inactive until the first input
    initialized: bool = False


@dataclass
class Prediction:
    desired: Pose
    feedforward: Twist
    active: bool


def estimator_on_input(est: BodyEstimator, pose: Pose, dt_input: float) -> None:
    """Fold one accepted input into the estimator; dt_input measured between
    accepted inputs and clamped to [5, 100] ms before any division."""
    if not est.initialized:
        est.last_input = pose.copy()
        est.estimated = pose.copy()
        est.initialized = True
        est.alpha_timer = 0.0
        return
    dt = min(max(dt_input, DT_INPUT_MIN), DT_INPUT_MAX)
    est.v_fd = (pose.position - est.last_input.position) / dt
    est.w_fd = quat_log(quat_mul(quat_conjugate(est.last_input.orientation), pose.orientation)) / dt
    if est.params.mode == "feedback":
        t_corr = est.params.correction_duration
        est.v_corr = (pose.position - est.estimated.position) / t_corr
        est.w_corr = quat_log(quat_mul(quat_conjugate(est.estimated.orientation), pose.orientation)) / t_corr
    else:
        est.estimated = pose.copy()
        est.v_corr[:] = 0.0
        est.w_corr[:] = 0.0
    est.last_input = pose.copy()
    est.alpha_timer = 0.0


def estimator_predict(est: BodyEstimator, dt_tick: float,
                      decay_duration: Optional[float] = None) -> Prediction:
    """Advance the estimated pose one tick and report the faded velocity.

    alpha ramps 1 -> 0 over decay_duration since the last input; at 0 the body
    is reported inactive and its pose freezes.
    """
    if not est.initialized:
        return Prediction(est.estimated.copy(), Twist.zero(), False)
    horizon = est.params.decay_duration if decay_duration is None else decay_duration
    alpha = max(0.0, 1.0 - est.alpha_timer / horizon) if horizon > 0 else 0.0
    v = alpha * (est.v_fd + est.v_corr)
    w = alpha * (est.w_fd + est.w_corr)
    twist = Twist(w, v)
    if alpha > 0.0:
        est.estimated = integrate_pose(est.estimated, twist, dt_tick)
    est.alpha_timer += dt_tick
    return Prediction(est.estimated.copy(), twist, alpha > 0.0)
