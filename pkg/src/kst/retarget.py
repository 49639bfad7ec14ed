"""Tracker-to-robot retargeting: pelvis, hands, chest, CoM and footsteps.

Calibration is captured silently from the first tracker bundle; there is no
separate start-up pose procedure.  All scale factors are ratios of robot
reference geometry (from FK at the initial configuration) to the operator's
geometry measured in that first bundle.  Models used for teleoperation must
define the frames pelvis / chest / left_shoulder / right_shoulder /
left_hand / right_hand / left_foot / right_foot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import (
    Pose,
    quat_conjugate,
    quat_from_yaw_pitch_roll,
    quat_mul,
    quat_normalize,
    quat_rotate,
    quat_to_yaw_pitch_roll,
    quat_yaw,
    wrap_angle,
)
from .model import JointConfiguration, RobotModel, forward_kinematics


class CalibrationError(ValueError):
    pass


@dataclass
class TrackerBundle:
    """One synchronized sample of the 7 tracked operator frames (world)."""

    timestamp: float
    headset: Pose
    controller_left: Pose
    controller_right: Pose
    chest: Pose
    waist: Pose
    ankle_left: Pose
    ankle_right: Pose

    def pose(self, name: str) -> Pose:
        return getattr(self, name)

    def copy(self) -> "TrackerBundle":
        return TrackerBundle(
            self.timestamp,
            *(getattr(self, f).copy() for f in (
                "headset", "controller_left", "controller_right",
                "chest", "waist", "ankle_left", "ankle_right",
            )),
        )


@dataclass
class RobotReferences:
    timestamp: float
    pelvis: Pose
    hand_left: Pose
    hand_right: Pose
    chest_orientation: np.ndarray
    com_ground: np.ndarray            # z = 0 by construction


@dataclass
class FootstepParams:
    step_threshold: float = 0.15        # m horizontal displacement to trigger
    lift_threshold: float = 0.08        # m ankle rise to trigger
    stride: float = 0.30                # m commanded step length
    turning_threshold: float = math.radians(25.0)
    stability_threshold: float = 0.02   # m inter-sample movement counted as still
    stability_samples: int = 20
    max_reach: float = 0.5              # m from the stance foot
    min_lateral: float = 0.15           # m signed separation from stance foot
    max_lateral: float = 0.45
    max_step_yaw: float = math.radians(30.0)


@dataclass
class RetargetingCalibration:
    initial_bundle: TrackerBundle
    robot_initial_pelvis: Pose
    robot_initial_chest: np.ndarray     # orientation only
    delta_pelvis: float
    delta_arm: float
    arm_length_human: float
    shoulder_initial_human: tuple       # (left Pose, right Pose)
    hand_mounting: dict                 # side -> quaternion


def estimate_shoulders(bundle: TrackerBundle) -> tuple:
    """Operator shoulder poses from the head/chest trackers.

    Head size is taken as head-chest distance over 1.5; shoulders sit one head
    length to either side along the chest tracker's lateral axis, lifted by
    half the head-chest height difference.  Orientation copies the chest.
    """
    d = bundle.headset.position - bundle.chest.position
    dist = float(np.linalg.norm(d))
    if dist <= 0.1:
        raise CalibrationError(f"head-chest distance {dist:.3f} m too small to size shoulders")
    l_head = dist / 1.5
    lateral = quat_rotate(bundle.chest.orientation, np.array([0.0, 1.0, 0.0]))
    lift = np.array([0.0, 0.0, 0.5 * (bundle.headset.position[2] - bundle.chest.position[2])])
    left = Pose(bundle.chest.position + l_head * lateral + lift, bundle.chest.orientation.copy())
    right = Pose(bundle.chest.position - l_head * lateral + lift, bundle.chest.orientation.copy())
    return left, right


def initialize_calibration(bundle: TrackerBundle, robot_model: RobotModel,
                           robot_state: JointConfiguration) -> RetargetingCalibration:
    """Derive scale factors and reference poses from the first bundle."""
    h_human = float(bundle.waist.position[2])
    if h_human <= 0.3:
        raise CalibrationError(f"waist tracker height {h_human:.3f} m; operator must stand upright")
    fk = forward_kinematics(robot_model, robot_state)
    for name in ("pelvis", "chest", "left_shoulder", "right_shoulder", "left_hand", "right_hand"):
        if name not in fk:
            raise CalibrationError(f"model '{robot_model.name}' lacks required frame '{name}'")
    h_robot = float(fk["pelvis"].position[2])
    delta_pelvis = h_robot / h_human

    sh_l, sh_r = estimate_shoulders(bundle)
    arm_l = float(np.linalg.norm(bundle.controller_left.position - sh_l.position))
    arm_r = float(np.linalg.norm(bundle.controller_right.position - sh_r.position))
    arm_human = 0.5 * (arm_l + arm_r)
    if arm_human < 0.2:
        raise CalibrationError(f"estimated operator arm length {arm_human:.3f} m < 0.2 m")
    arm_robot = 0.5 * (
        float(np.linalg.norm(fk["left_hand"].position - fk["left_shoulder"].position))
        + float(np.linalg.norm(fk["right_hand"].position - fk["right_shoulder"].position))
    )
    return RetargetingCalibration(
        initial_bundle=bundle.copy(),
        robot_initial_pelvis=fk["pelvis"].copy(),
        robot_initial_chest=fk["chest"].orientation.copy(),
        delta_pelvis=delta_pelvis,
        delta_arm=arm_robot / arm_human,
        arm_length_human=arm_human,
        shoulder_initial_human=(sh_l, sh_r),
        hand_mounting=robot_model.hand_mounting,
    )


def _variation_no_roll(q_initial: np.ndarray, q_current: np.ndarray) -> np.ndarray:
    rel = quat_mul(quat_conjugate(q_initial), q_current)
    yaw, pitch, _ = quat_to_yaw_pitch_roll(rel)
    return quat_from_yaw_pitch_roll(yaw, pitch, 0.0)


def retarget_pelvis(cal: RetargetingCalibration, bundle: TrackerBundle,
                    scale_xy: bool = True) -> Pose:
    """Scaled waist displacement on top of the robot's initial pelvis pose;
    the roll component of the waist variation is discarded.  With scale_xy
    False only the height displacement is scaled by the leg ratio and the
    horizontal displacement passes through unscaled (useful when the operator
    walks around a space sized for the robot)."""
    disp = bundle.waist.position - cal.initial_bundle.waist.position
    scale = np.full(3, cal.delta_pelvis) if scale_xy else np.array([1.0, 1.0, cal.delta_pelvis])
    pos = cal.robot_initial_pelvis.position + scale * disp
    rel = _variation_no_roll(cal.initial_bundle.waist.orientation, bundle.waist.orientation)
    quat = quat_normalize(quat_mul(cal.robot_initial_pelvis.orientation, rel))
    return Pose(pos, quat)


def retarget_chest(cal: RetargetingCalibration, bundle: TrackerBundle) -> np.ndarray:
    """Chest orientation reference: chest tracker variation composed onto the
    robot's initial chest orientation (same structure as the pelvis rule,
    roll retained since the robot spine can roll)."""
    rel = quat_mul(quat_conjugate(cal.initial_bundle.chest.orientation), bundle.chest.orientation)
    return quat_normalize(quat_mul(cal.robot_initial_chest, rel))


def retarget_hands(cal: RetargetingCalibration, bundle: TrackerBundle,
                   robot_shoulders: tuple) -> tuple:
    """Controller offsets from the estimated operator shoulders, scaled by the
    arm-length ratio, applied at the robot's current shoulder positions."""
    sh_l, sh_r = estimate_shoulders(bundle)
    out = []
    for side, ctrl, sh_h, sh_r_pos in (
        ("left", bundle.controller_left, sh_l, robot_shoulders[0]),
        ("right", bundle.controller_right, sh_r, robot_shoulders[1]),
    ):
        pos = np.asarray(sh_r_pos, dtype=float) + cal.delta_arm * (ctrl.position - sh_h.position)
        quat = quat_normalize(quat_mul(ctrl.orientation, cal.hand_mounting[side]))
        out.append(Pose(pos, quat))
    return out[0], out[1]


def retarget_com(bundle: TrackerBundle, robot_feet_ground: tuple,
                 fallback: Optional[np.ndarray] = None) -> np.ndarray:
    """Ground CoM reference: waist position projected onto the operator's
    foot-to-foot line gives a normalized offset o in [0, 1], replayed onto the
    segment between the robot's foot ground points."""
    pl = bundle.ankle_left.position.copy()
    pr = bundle.ankle_right.position.copy()
    pw = bundle.waist.position.copy()
    pl[2] = pr[2] = pw[2] = 0.0
    seg = pr - pl
    denom = float(seg @ seg)
    if denom < 1e-6:
        if fallback is not None:
            return np.asarray(fallback, dtype=float).copy()
        seg = np.zeros(3)
        o = 0.5
    else:
        o = float(np.clip(((pw - pl) @ seg) / denom, 0.0, 1.0))
    rl = np.asarray(robot_feet_ground[0], dtype=float).copy()
    rr = np.asarray(robot_feet_ground[1], dtype=float).copy()
    rl[2] = rr[2] = 0.0
    return rl + o * (rr - rl)


@dataclass
class _SideState:
    initial_ankle: Pose
    stepping: bool = False
    stability_counter: int = 0
    last_pos: np.ndarray = field(default_factory=lambda: np.zeros(3))
    last_yaw: float = 0.0


@dataclass
class FootstepCommand:
    side: str                  # "left" | "right"
    pose: Pose                 # sole frame, yaw-only orientation
    timestamp: float


@dataclass
class FootstepStreamState:
    left: _SideState
    right: _SideState
    dropped_infeasible: int = 0

    @staticmethod
    def from_bundle(bundle: TrackerBundle) -> "FootstepStreamState":
        def mk(pose: Pose) -> _SideState:
            return _SideState(pose.copy(), last_pos=pose.position.copy(), last_yaw=quat_yaw(pose.orientation))
        return FootstepStreamState(mk(bundle.ankle_left), mk(bundle.ankle_right))


def _yaw_only_pose(position: np.ndarray, yaw: float) -> Pose:
    p = np.asarray(position, dtype=float).copy()
    p[2] = 0.0
    return Pose(p, quat_from_yaw_pitch_roll(yaw, 0.0, 0.0))


def footstep_stream_update(state: FootstepStreamState, bundle: TrackerBundle,
                           robot_feet: tuple, params: FootstepParams) -> Optional[FootstepCommand]:
    """Detect operator steps and emit at most one feasible footstep command.

    ``robot_feet`` is (left, right) current robot sole poses.  Only one
    command per side may be outstanding; the side re-arms after the ankle
    tracker stays within the stability threshold for N consecutive samples,
    which also re-anchors the reference ankle pose.
    """
    result = None
    for side, ankle, same, stance in (
        ("left", bundle.ankle_left, robot_feet[0], robot_feet[1]),
        ("right", bundle.ankle_right, robot_feet[1], robot_feet[0]),
    ):
        ss = state.left if side == "left" else state.right
        yaw_now = quat_yaw(ankle.orientation)
        moved = float(np.linalg.norm(ankle.position - ss.last_pos))
        ss.last_pos = ankle.position.copy()
        ss.last_yaw = yaw_now
        if moved < params.stability_threshold:
            ss.stability_counter += 1
            if ss.stability_counter >= params.stability_samples:
                ss.stepping = False
                ss.initial_ankle = ankle.copy()
        else:
            ss.stability_counter = 0
        if ss.stepping or result is not None:
            continue

        disp = ankle.position - ss.initial_ankle.position
        horiz = math.hypot(disp[0], disp[1])
        lift = float(disp[2])
        dyaw = wrap_angle(yaw_now - quat_yaw(ss.initial_ankle.orientation))
        translating = horiz > params.step_threshold and lift > params.lift_threshold
        turning = abs(dyaw) > params.turning_threshold
        if not translating and not turning:
            continue

        same_pos = same.position.copy()
        same_pos[2] = 0.0
        if translating:
            direction = np.array([disp[0] / horiz, disp[1] / horiz, 0.0])
            target_pos = same_pos + params.stride * direction
        else:
            target_pos = same_pos
        same_yaw = quat_yaw(same.orientation)
        stance_yaw = quat_yaw(stance.orientation)
        target_yaw = same_yaw + (dyaw if turning else 0.0)
        rel_yaw = wrap_angle(target_yaw - stance_yaw)
        rel_yaw = max(-params.max_step_yaw, min(params.max_step_yaw, rel_yaw))
        target_yaw = stance_yaw + rel_yaw

        stance_pos = stance.position.copy()
        stance_pos[2] = 0.0
        offset = target_pos - stance_pos
        reach = float(np.linalg.norm(offset))
        # signed lateral separation in the stance foot's yaw frame; left foot
        # must stay left of the right foot and vice versa
        lat = -math.sin(stance_yaw) * offset[0] + math.cos(stance_yaw) * offset[1]
        lat_signed = lat if side == "left" else -lat
        if reach > params.max_reach or not (params.min_lateral <= lat_signed <= params.max_lateral):
            state.dropped_infeasible += 1
            continue

        ss.stepping = True
        ss.stability_counter = 0
        result = FootstepCommand(side, _yaw_only_pose(target_pos, target_yaw), bundle.timestamp)
    return result


def build_references(cal: RetargetingCalibration, bundle: TrackerBundle,
                     robot_shoulders: tuple, robot_feet_ground: tuple,
                     com_fallback: Optional[np.ndarray] = None,
                     pelvis_scale_xy: bool = True) -> RobotReferences:
    hand_l, hand_r = retarget_hands(cal, bundle, robot_shoulders)
    return RobotReferences(
        timestamp=bundle.timestamp,
        pelvis=retarget_pelvis(cal, bundle, scale_xy=pelvis_scale_xy),
        hand_left=hand_l,
        hand_right=hand_r,
        chest_orientation=retarget_chest(cal, bundle),
        com_ground=retarget_com(bundle, robot_feet_ground, com_fallback),
    )
