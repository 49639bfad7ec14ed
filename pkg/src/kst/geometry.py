"""Quaternion / rigid-transform primitives shared by every stage of the pipeline.

Conventions, fixed project-wide:

* quaternions are ``[w, x, y, z]`` numpy arrays, unit norm, canonical sign
  ``w >= 0`` (enforced on normalization so log stays continuous along streams);
* 6-vectors are ordered (angular, linear);
* angular velocities / rotation errors are expressed in the body-fixed frame
  of the *current* orientation, linear quantities in world frame.  This is the
  same convention the geometric Jacobians use, so task errors and Jacobian
  rows compose without extra frame juggling;
* orientation integration composes on the right: ``q <- q * exp(w * dt)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])

# series fallback threshold for log/exp near zero rotation
_SMALL_ANGLE = 1e-8


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Unit-norm quaternion with canonical sign (w >= 0)."""
    w, x, y, z = q
    n = math.sqrt(w * w + x * x + y * y + z * z)
    if n < 1e-12:
        return IDENTITY_QUAT.copy()
    inv = 1.0 / n
    if w < 0.0:
        inv = -inv
    return np.array([w * inv, x * inv, y * inv, z * inv])


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a * b (no normalization)."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_log(q: np.ndarray) -> np.ndarray:
    """Rotation vector (angle * axis) of a unit quaternion, angle in [0, pi].

    Uses the atan2 form, stable for any angle; below ``_SMALL_ANGLE`` vector
    norm a first-order series avoids the 0/0.
    """
    w, x, y, z = q
    if w < 0.0:  # resolve double cover so the returned angle is <= pi
        w, x, y, z = -w, -x, -y, -z
    vn = math.sqrt(x * x + y * y + z * z)
    if vn < _SMALL_ANGLE:
        scale = 2.0 / w if w > 0.0 else 2.0
        return np.array([x * scale, y * scale, z * scale])
    angle = 2.0 * math.atan2(vn, w)
    scale = angle / vn
    return np.array([x * scale, y * scale, z * scale])


def quat_exp(v: np.ndarray) -> np.ndarray:
    """Unit quaternion for a rotation vector; inverse of quat_log for |v| < pi."""
    vx, vy, vz = v
    angle = math.sqrt(vx * vx + vy * vy + vz * vz)
    if angle < _SMALL_ANGLE:
        half = 0.5 - angle * angle / 48.0
        return quat_normalize(np.array([1.0, vx * half, vy * half, vz * half]))
    half = 0.5 * angle
    s = math.sin(half) / angle
    return quat_normalize(np.array([math.cos(half), vx * s, vy * s, vz * s]))


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector v by quaternion q (q v q^-1)."""
    w, x, y, z = q
    vx, vy, vz = v
    # t = 2 * (vec(q) x v)
    tx = 2.0 * (y * vz - z * vy)
    ty = 2.0 * (z * vx - x * vz)
    tz = 2.0 * (x * vy - y * vx)
    return np.array(
        [
            vx + w * tx + (y * tz - z * ty),
            vy + w * ty + (z * tx - x * tz),
            vz + w * tz + (x * ty - y * tx),
        ]
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    return np.array(
        [
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ]
    )


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Rotation matrix -> unit quaternion (Shepperd's branch selection)."""
    t = m[0, 0] + m[1, 1] + m[2, 2]
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return quat_normalize(q)


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    return quat_exp(a * angle)


def quat_yaw(q: np.ndarray) -> float:
    """Yaw (rotation about world z) of the intrinsic z-y-x factorization."""
    w, x, y, z = q
    return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))


def quat_to_yaw_pitch_roll(q: np.ndarray) -> tuple[float, float, float]:
    """Intrinsic z-y-x (yaw, pitch, roll) angles of a unit quaternion."""
    w, x, y, z = q
    yaw = math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    sp = 2.0 * (w * y - z * x)
    sp = max(-1.0, min(1.0, sp))
    pitch = math.asin(sp)
    roll = math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    return yaw, pitch, roll


def quat_from_yaw_pitch_roll(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Compose intrinsic z-y-x angles back into a quaternion."""
    qz = np.array([math.cos(yaw / 2), 0.0, 0.0, math.sin(yaw / 2)])
    qy = np.array([math.cos(pitch / 2), 0.0, math.sin(pitch / 2), 0.0])
    qx = np.array([math.cos(roll / 2), math.sin(roll / 2), 0.0, 0.0])
    return quat_normalize(quat_mul(quat_mul(qz, qy), qx))


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a > math.pi:
        a -= 2.0 * math.pi
    elif a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass
class Pose:
    """World position (m) + orientation quaternion. Treated as immutable."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    def copy(self) -> "Pose":
        return Pose(self.position.copy(), self.orientation.copy())

    def transform_point(self, p_local: np.ndarray) -> np.ndarray:
        return self.position + quat_rotate(self.orientation, p_local)

    def inverse_transform_point(self, p_world: np.ndarray) -> np.ndarray:
        return quat_rotate(quat_conjugate(self.orientation), p_world - self.position)

    def compose(self, other: "Pose") -> "Pose":
        """self * other: other expressed in self's frame, result in world."""
        return Pose(
            self.transform_point(other.position),
            quat_normalize(quat_mul(self.orientation, other.orientation)),
        )


@dataclass
class Twist:
    """Body-frame angular (rad/s) + world-frame linear (m/s) velocity."""

    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))
    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @staticmethod
    def zero() -> "Twist":
        return Twist()

    def copy(self) -> "Twist":
        return Twist(self.angular.copy(), self.linear.copy())

    def scaled(self, s: float) -> "Twist":
        return Twist(self.angular * s, self.linear * s)

    def as_vector(self) -> np.ndarray:
        """Stacked (angular, linear) 6-vector."""
        return np.concatenate([self.angular, self.linear])


def pose_error(current: Pose, desired: Pose) -> np.ndarray:
    """6-vector (angular, linear) error; angular in current body frame."""
    ang = quat_log(quat_mul(quat_conjugate(current.orientation), desired.orientation))
    lin = desired.position - current.position
    return np.concatenate([ang, lin])


def pose_feedback(current: Pose, desired: Pose, gain: float) -> Twist:
    """Proportional velocity command that drives current toward desired.

    linear  = gain * (p_des - p_cur)                 (world frame)
    angular = gain * log(q_cur^-1 * q_des)           (current body frame)
    """
    ang = quat_log(quat_mul(quat_conjugate(current.orientation), desired.orientation))
    return Twist(ang * gain, (desired.position - current.position) * gain)


def integrate_pose(pose: Pose, twist: Twist, dt: float) -> Pose:
    """First-order pose update matching the Jacobian convention.

    Position integrates in world, orientation composes the body-frame
    angular velocity on the right; quaternion renormalized every step.
    """
    return Pose(
        pose.position + twist.linear * dt,
        quat_normalize(quat_mul(pose.orientation, quat_exp(twist.angular * dt))),
    )
