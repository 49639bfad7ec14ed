"""Independent reference implementations used as test oracles.

Everything here is written from scratch on purpose (plain float math,
brute-force search, textbook formulas) so that agreement with the package
is evidence rather than tautology.  Keep this module free of imports from
kst internals except where a test explicitly compares against raw model
arrays.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


# ---------------------------------------------------------------------------
# minimal local quaternion algebra (w, x, y, z)

def qmul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def qconj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def qlog(q):
    w, x, y, z = q
    if w < 0.0:
        w, x, y, z = -w, -x, -y, -z
    vn = math.sqrt(x * x + y * y + z * z)
    if vn < 1e-12:
        return np.zeros(3)
    angle = 2.0 * math.atan2(vn, w)
    return np.array([x, y, z]) * (angle / vn)


def qexp(v):
    angle = float(np.linalg.norm(v))
    if angle < 1e-12:
        return np.array([1.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2]]) / math.sqrt(
            1.0 + 0.25 * (angle * angle))
    half = 0.5 * angle
    s = math.sin(half) / angle
    return np.array([math.cos(half), v[0] * s, v[1] * s, v[2] * s])


def qrotate(q, v):
    qv = np.array([0.0, v[0], v[1], v[2]])
    return qmul(qmul(q, qv), qconj(q))[1:]


def random_quat(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


# ---------------------------------------------------------------------------
# brute-force box-and-inequality QP: enumerate active sets, solve the KKT
# system per set, accept the first stationary point that is primal feasible
# with nonnegative multipliers (sufficient for a convex problem)

def brute_force_qp(H, g, lb, ub, C=None, d=None, feas_tol=1e-8, dual_tol=1e-8):
    n = g.shape[0]
    rows = []
    rhs = []
    if C is not None and d is not None and len(d):
        for i in range(len(d)):
            rows.append(np.asarray(C[i], dtype=float))
            rhs.append(float(d[i]))
    for j in range(n):
        if np.isfinite(ub[j]):
            e = np.zeros(n)
            e[j] = 1.0
            rows.append(e)
            rhs.append(float(ub[j]))
        if np.isfinite(lb[j]):
            e = np.zeros(n)
            e[j] = -1.0
            rows.append(e)
            rhs.append(float(-lb[j]))
    A = np.asarray(rows).reshape(len(rows), n)
    b = np.asarray(rhs)
    k = len(rhs)

    for size in range(0, min(n, k) + 1):
        for combo in itertools.combinations(range(k), size):
            idx = list(combo)
            kkt = np.zeros((n + size, n + size))
            kkt[:n, :n] = H
            if size:
                kkt[:n, n:] = A[idx].T
                kkt[n:, :n] = A[idx]
            try:
                sol = np.linalg.solve(kkt, np.concatenate([-g, b[idx]]))
            except np.linalg.LinAlgError:
                continue
            x, mu = sol[:n], sol[n:]
            if size and np.any(mu < -dual_tol):
                continue
            if k and (A @ x - b).max(initial=0.0) > feas_tol:
                continue
            return x
    return None


def random_feasible_qp(rng, n_max=10, m_max=8, bound_vars=4):
    """Strictly convex QP with a guaranteed strictly feasible point.

    Finite box bounds on at most ``bound_vars`` variables keep the brute-force
    active-set enumeration tractable.
    """
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(0, m_max + 1))
    A = rng.normal(size=(n, n))
    H = A @ A.T + (0.1 + rng.uniform()) * np.eye(n)
    g = 2.0 * rng.normal(size=n)
    x0 = 0.5 * rng.normal(size=n)
    C = rng.normal(size=(m, n))
    d = C @ x0 + rng.uniform(0.05, 1.0, size=m)
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    nb = int(rng.integers(0, min(n, bound_vars) + 1))
    if nb:
        idx = rng.choice(n, size=nb, replace=False)
        lb[idx] = x0[idx] - rng.uniform(0.05, 2.0, size=nb)
        ub[idx] = x0[idx] + rng.uniform(0.05, 2.0, size=nb)
    return H, g, lb, ub, C, d


# ---------------------------------------------------------------------------
# numeric frame Jacobian: finite differences of forward kinematics using the
# package's own velocity conventions (base angular in body frame, base linear
# in world, angular error in the frame's coordinates)

def numeric_frame_jacobian(model, q, frame, fk_fn, step=1e-6):
    from kst.model import JointConfiguration
    from kst.geometry import Pose

    def frame_pose(conf):
        return fk_fn(model, conf)[frame]

    base = frame_pose(q)
    n = model.num_velocities
    J = np.zeros((6, n))
    for i in range(n):
        if i < 3:
            dq = np.zeros(3)
            dq[i] = step
            pert_base = Pose(q.base_pose.position.copy(),
                             qmul(q.base_pose.orientation, qexp(dq)))
            conf = JointConfiguration(pert_base, q.joint_positions.copy())
        elif i < 6:
            dp = np.zeros(3)
            dp[i - 3] = step
            pert_base = Pose(q.base_pose.position + dp, q.base_pose.orientation.copy())
            conf = JointConfiguration(pert_base, q.joint_positions.copy())
        else:
            joints = q.joint_positions.copy()
            joints[i - 6] += step
            conf = JointConfiguration(q.base_pose.copy(), joints)
        pert = frame_pose(conf)
        J[0:3, i] = qlog(qmul(qconj(base.orientation), pert.orientation)) / step
        J[3:6, i] = (pert.position - base.position) / step
    return J


# ---------------------------------------------------------------------------
# analytic two-link planar arm, both links 0.5 m, revolute about world z

def planar_tip(q1, q2, l1=0.5, l2=0.5):
    return np.array([l1 * math.cos(q1) + l2 * math.cos(q1 + q2),
                     l1 * math.sin(q1) + l2 * math.sin(q1 + q2),
                     0.0])


def planar_mid(q1, l1=0.5):
    return np.array([l1 * math.cos(q1), l1 * math.sin(q1), 0.0])


# ---------------------------------------------------------------------------
# closest-point distance between capsules/spheres (a sphere is a zero-length
# capsule); textbook clamped segment-segment formulation

def _point_segment(p, a, b):
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom < 1e-18 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return a + t * ab


def segment_segment_closest(p1, q1, p2, q2):
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = float(d1 @ d1)
    e = float(d2 @ d2)
    f = float(d2 @ r)
    if a < 1e-18 and e < 1e-18:
        return p1.copy(), p2.copy()
    if a < 1e-18:
        t = np.clip(f / e, 0.0, 1.0)
        return p1.copy(), p2 + t * d2
    c = float(d1 @ r)
    if e < 1e-18:
        s = np.clip(-c / a, 0.0, 1.0)
        return p1 + s * d1, p2.copy()
    b = float(d1 @ d2)
    denom = a * e - b * b
    s = float(np.clip((b * f - c * e) / denom, 0.0, 1.0)) if denom > 1e-18 else 0.0
    t = (b * s + f) / e
    if t < 0.0:
        t = 0.0
        s = float(np.clip(-c / a, 0.0, 1.0))
    elif t > 1.0:
        t = 1.0
        s = float(np.clip((b - c) / a, 0.0, 1.0))
    return p1 + s * d1, p2 + t * d2


def capsule_capsule_distance(p1, q1, r1, p2, q2, r2):
    """Signed surface separation between two capsules (spheres when p == q)."""
    ca, cb = segment_segment_closest(np.asarray(p1, float), np.asarray(q1, float),
                                     np.asarray(p2, float), np.asarray(q2, float))
    return float(np.linalg.norm(cb - ca)) - r1 - r2


# ---------------------------------------------------------------------------
# scalar critically-observed PD integration, semi-implicit Euler

def pd_scalar_trajectory(q0, qd0, q_target, kp, kd, dt, steps):
    q, qd = float(q0), float(qd0)
    out = np.empty((steps, 2))
    for i in range(steps):
        qdd = kp * (q_target - q) + kd * (0.0 - qd)
        qd += qdd * dt
        q += qd * dt
        out[i] = (q, qd)
    return out
