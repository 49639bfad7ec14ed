"""Numba kernels for the per-tick model queries (FK, Jacobians, momentum, collision).

These are the hot inner loops of the 1 kHz tick; everything is hand-unrolled
3x3 float math on flat arrays (a 3x3 ``@`` inside numba dispatches to BLAS and
is ~6x slower at this size).  Layout conventions match :mod:`kst.geometry`:
columns are [base angular (body frame), base linear (world), joints], world
link poses are rotation matrices + positions, link ``j + 1`` is the child of
revolute joint ``j`` and link 0 is the floating-base root.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def fk_links(parent, origin_rot, origin_pos, axis, q, base_rot, base_pos, link_rot, link_pos, axis_w):
    """World pose of every link plus world joint axes.

    parent[j]     parent link index of revolute joint j (child link = j + 1)
    origin_*      fixed transform parent link -> joint frame
    axis[j]       rotation axis in the joint frame (unit)
    """
    nj = parent.shape[0]
    for r in range(3):
        for c in range(3):
            link_rot[0, r, c] = base_rot[r, c]
        link_pos[0, r] = base_pos[r]
    for j in range(nj):
        cq = np.cos(q[j])
        sq = np.sin(q[j])
        ax, ay, az = axis[j, 0], axis[j, 1], axis[j, 2]
        C = 1.0 - cq
        r00 = cq + ax * ax * C
        r01 = ax * ay * C - az * sq
        r02 = ax * az * C + ay * sq
        r10 = ay * ax * C + az * sq
        r11 = cq + ay * ay * C
        r12 = ay * az * C - ax * sq
        r20 = az * ax * C - ay * sq
        r21 = az * ay * C + ax * sq
        r22 = cq + az * az * C
        O = origin_rot[j]
        a00 = O[0, 0] * r00 + O[0, 1] * r10 + O[0, 2] * r20
        a01 = O[0, 0] * r01 + O[0, 1] * r11 + O[0, 2] * r21
        a02 = O[0, 0] * r02 + O[0, 1] * r12 + O[0, 2] * r22
        a10 = O[1, 0] * r00 + O[1, 1] * r10 + O[1, 2] * r20
        a11 = O[1, 0] * r01 + O[1, 1] * r11 + O[1, 2] * r21
        a12 = O[1, 0] * r02 + O[1, 1] * r12 + O[1, 2] * r22
        a20 = O[2, 0] * r00 + O[2, 1] * r10 + O[2, 2] * r20
        a21 = O[2, 0] * r01 + O[2, 1] * r11 + O[2, 2] * r21
        a22 = O[2, 0] * r02 + O[2, 1] * r12 + O[2, 2] * r22
        p = parent[j]
        Rp = link_rot[p]
        child = j + 1
        for k in range(3):
            link_rot[child, k, 0] = Rp[k, 0] * a00 + Rp[k, 1] * a10 + Rp[k, 2] * a20
            link_rot[child, k, 1] = Rp[k, 0] * a01 + Rp[k, 1] * a11 + Rp[k, 2] * a21
            link_rot[child, k, 2] = Rp[k, 0] * a02 + Rp[k, 1] * a12 + Rp[k, 2] * a22
            link_pos[child, k] = (
                link_pos[p, k]
                + Rp[k, 0] * origin_pos[j, 0]
                + Rp[k, 1] * origin_pos[j, 1]
                + Rp[k, 2] * origin_pos[j, 2]
            )
        # world axis: child rotation leaves its own axis fixed
        for k in range(3):
            axis_w[j, k] = (
                link_rot[child, k, 0] * ax + link_rot[child, k, 1] * ay + link_rot[child, k, 2] * az
            )


@njit(cache=True)
def point_jacobian(link_rot, link_pos, axis_w, ancestors, link, point, J):
    """6 x (6 + nj) geometric Jacobian of a world point fixed to ``link``.

    Rows 0-2 world angular velocity, rows 3-5 world linear velocity of the
    point.  ``ancestors[link, j]`` marks joints on the root -> link path.
    """
    nj = axis_w.shape[0]
    J[:] = 0.0
    R0 = link_rot[0]
    rx = point[0] - link_pos[0, 0]
    ry = point[1] - link_pos[0, 1]
    rz = point[2] - link_pos[0, 2]
    for c in range(3):
        # base angular columns: w_world = R_base * w_body
        bx = R0[0, c]
        by = R0[1, c]
        bz = R0[2, c]
        J[0, c] = bx
        J[1, c] = by
        J[2, c] = bz
        # point velocity = w x r
        J[3, c] = by * rz - bz * ry
        J[4, c] = bz * rx - bx * rz
        J[5, c] = bx * ry - by * rx
    J[3, 3] = 1.0
    J[4, 4] = 1.0
    J[5, 5] = 1.0
    for j in range(nj):
        if not ancestors[link, j]:
            continue
        ax = axis_w[j, 0]
        ay = axis_w[j, 1]
        az = axis_w[j, 2]
        px = point[0] - link_pos[j + 1, 0]
        py = point[1] - link_pos[j + 1, 1]
        pz = point[2] - link_pos[j + 1, 2]
        col = 6 + j
        J[0, col] = ax
        J[1, col] = ay
        J[2, col] = az
        J[3, col] = ay * pz - az * py
        J[4, col] = az * px - ax * pz
        J[5, col] = ax * py - ay * px


@njit(cache=True)
def com_position(link_rot, link_pos, mass, com_local, out):
    total = 0.0
    out[0] = 0.0
    out[1] = 0.0
    out[2] = 0.0
    for l in range(mass.shape[0]):
        m = mass[l]
        R = link_rot[l]
        for k in range(3):
            out[k] += m * (
                link_pos[l, k]
                + R[k, 0] * com_local[l, 0]
                + R[k, 1] * com_local[l, 1]
                + R[k, 2] * com_local[l, 2]
            )
        total += m
    inv = 1.0 / total
    out[0] *= inv
    out[1] *= inv
    out[2] *= inv
    return total


@njit(cache=True)
def centroidal_momentum_matrix(link_rot, link_pos, axis_w, ancestors, mass, com_local, inertia_local, com_w, A):
    """6 x n matrix mapping generalized velocity to momentum about the CoM.

    Rows 0-2 angular momentum (world), rows 3-5 linear momentum = m * dCoM.
    Per link: h_ang += I_w * w_l + m * (c_l - c) x v_cl,  h_lin += m * v_cl,
    accumulated column-wise against the same velocity layout as the Jacobians.
    """
    L = mass.shape[0]
    nj = axis_w.shape[0]
    n = 6 + nj
    A[:] = 0.0
    for l in range(L):
        m = mass[l]
        R = link_rot[l]
        # link CoM in world and offset from robot CoM
        clx = link_pos[l, 0] + R[0, 0] * com_local[l, 0] + R[0, 1] * com_local[l, 1] + R[0, 2] * com_local[l, 2]
        cly = link_pos[l, 1] + R[1, 0] * com_local[l, 0] + R[1, 1] * com_local[l, 1] + R[1, 2] * com_local[l, 2]
        clz = link_pos[l, 2] + R[2, 0] * com_local[l, 0] + R[2, 1] * com_local[l, 1] + R[2, 2] * com_local[l, 2]
        dx = clx - com_w[0]
        dy = cly - com_w[1]
        dz = clz - com_w[2]
        # I_w = R I R^T
        I = inertia_local[l]
        t00 = R[0, 0] * I[0, 0] + R[0, 1] * I[1, 0] + R[0, 2] * I[2, 0]
        t01 = R[0, 0] * I[0, 1] + R[0, 1] * I[1, 1] + R[0, 2] * I[2, 1]
        t02 = R[0, 0] * I[0, 2] + R[0, 1] * I[1, 2] + R[0, 2] * I[2, 2]
        t10 = R[1, 0] * I[0, 0] + R[1, 1] * I[1, 0] + R[1, 2] * I[2, 0]
        t11 = R[1, 0] * I[0, 1] + R[1, 1] * I[1, 1] + R[1, 2] * I[2, 1]
        t12 = R[1, 0] * I[0, 2] + R[1, 1] * I[1, 2] + R[1, 2] * I[2, 2]
        t20 = R[2, 0] * I[0, 0] + R[2, 1] * I[1, 0] + R[2, 2] * I[2, 0]
        t21 = R[2, 0] * I[0, 1] + R[2, 1] * I[1, 1] + R[2, 2] * I[2, 1]
        t22 = R[2, 0] * I[0, 2] + R[2, 1] * I[1, 2] + R[2, 2] * I[2, 2]
        i00 = t00 * R[0, 0] + t01 * R[0, 1] + t02 * R[0, 2]
        i01 = t00 * R[1, 0] + t01 * R[1, 1] + t02 * R[1, 2]
        i02 = t00 * R[2, 0] + t01 * R[2, 1] + t02 * R[2, 2]
        i11 = t10 * R[1, 0] + t11 * R[1, 1] + t12 * R[1, 2]
        i12 = t10 * R[2, 0] + t11 * R[2, 1] + t12 * R[2, 2]
        i22 = t20 * R[2, 0] + t21 * R[2, 1] + t22 * R[2, 2]
        i10 = i01
        i20 = i02
        i21 = i12
        for col in range(n):
            if col < 3:
                wx1 = link_rot[0, 0, col]
                wy1 = link_rot[0, 1, col]
                wz1 = link_rot[0, 2, col]
                rx = clx - link_pos[0, 0]
                ry = cly - link_pos[0, 1]
                rz = clz - link_pos[0, 2]
                vx = wy1 * rz - wz1 * ry
                vy = wz1 * rx - wx1 * rz
                vz = wx1 * ry - wy1 * rx
            elif col < 6:
                wx1 = 0.0
                wy1 = 0.0
                wz1 = 0.0
                vx = 1.0 if col == 3 else 0.0
                vy = 1.0 if col == 4 else 0.0
                vz = 1.0 if col == 5 else 0.0
            else:
                j = col - 6
                if not ancestors[l, j]:
                    continue
                wx1 = axis_w[j, 0]
                wy1 = axis_w[j, 1]
                wz1 = axis_w[j, 2]
                rx = clx - link_pos[j + 1, 0]
                ry = cly - link_pos[j + 1, 1]
                rz = clz - link_pos[j + 1, 2]
                vx = wy1 * rz - wz1 * ry
                vy = wz1 * rx - wx1 * rz
                vz = wx1 * ry - wy1 * rx
            A[0, col] += i00 * wx1 + i01 * wy1 + i02 * wz1 + m * (dy * vz - dz * vy)
            A[1, col] += i10 * wx1 + i11 * wy1 + i12 * wz1 + m * (dz * vx - dx * vz)
            A[2, col] += i20 * wx1 + i21 * wy1 + i22 * wz1 + m * (dx * vy - dy * vx)
            A[3, col] += m * vx
            A[4, col] += m * vy
            A[5, col] += m * vz


@njit(cache=True)
def spatial_task_update(link_rot, link_pos, axis_w, ancestors, flink, frot, fpos,
                        ref_quat, ref_pos, gain, ff, J, p_out, pose_out):
    """Fused per-task computation: frame pose, Jacobian and feedback vector.

    J rows 0-2 are the frame's angular velocity in its own coordinates (world
    rows premultiplied by R_frameᵀ), rows 3-5 world linear velocity of the
    frame origin.  p_out = gain * pose_error(frame, ref) + ff with the angular
    error log taken through a quaternion (stable near pi).  pose_out packs
    [quat wxyz, position] of the frame for callers that need it.
    """
    R = link_rot[flink]
    # frame world rotation F = R @ frot and origin
    f00 = R[0, 0] * frot[0, 0] + R[0, 1] * frot[1, 0] + R[0, 2] * frot[2, 0]
    f01 = R[0, 0] * frot[0, 1] + R[0, 1] * frot[1, 1] + R[0, 2] * frot[2, 1]
    f02 = R[0, 0] * frot[0, 2] + R[0, 1] * frot[1, 2] + R[0, 2] * frot[2, 2]
    f10 = R[1, 0] * frot[0, 0] + R[1, 1] * frot[1, 0] + R[1, 2] * frot[2, 0]
    f11 = R[1, 0] * frot[0, 1] + R[1, 1] * frot[1, 1] + R[1, 2] * frot[2, 1]
    f12 = R[1, 0] * frot[0, 2] + R[1, 1] * frot[1, 2] + R[1, 2] * frot[2, 2]
    f20 = R[2, 0] * frot[0, 0] + R[2, 1] * frot[1, 0] + R[2, 2] * frot[2, 0]
    f21 = R[2, 0] * frot[0, 1] + R[2, 1] * frot[1, 1] + R[2, 2] * frot[2, 1]
    f22 = R[2, 0] * frot[0, 2] + R[2, 1] * frot[1, 2] + R[2, 2] * frot[2, 2]
    px = link_pos[flink, 0] + R[0, 0] * fpos[0] + R[0, 1] * fpos[1] + R[0, 2] * fpos[2]
    py = link_pos[flink, 1] + R[1, 0] * fpos[0] + R[1, 1] * fpos[1] + R[1, 2] * fpos[2]
    pz = link_pos[flink, 2] + R[2, 0] * fpos[0] + R[2, 1] * fpos[1] + R[2, 2] * fpos[2]

    nj = axis_w.shape[0]
    J[:] = 0.0
    R0 = link_rot[0]
    rx = px - link_pos[0, 0]
    ry = py - link_pos[0, 1]
    rz = pz - link_pos[0, 2]
    for c in range(3):
        bx = R0[0, c]
        by = R0[1, c]
        bz = R0[2, c]
        # angular rows in frame coordinates: Fᵀ · w_world
        J[0, c] = f00 * bx + f10 * by + f20 * bz
        J[1, c] = f01 * bx + f11 * by + f21 * bz
        J[2, c] = f02 * bx + f12 * by + f22 * bz
        J[3, c] = by * rz - bz * ry
        J[4, c] = bz * rx - bx * rz
        J[5, c] = bx * ry - by * rx
    J[3, 3] = 1.0
    J[4, 4] = 1.0
    J[5, 5] = 1.0
    for j in range(nj):
        if not ancestors[flink, j]:
            continue
        ax = axis_w[j, 0]
        ay = axis_w[j, 1]
        az = axis_w[j, 2]
        ox = px - link_pos[j + 1, 0]
        oy = py - link_pos[j + 1, 1]
        oz = pz - link_pos[j + 1, 2]
        col = 6 + j
        J[0, col] = f00 * ax + f10 * ay + f20 * az
        J[1, col] = f01 * ax + f11 * ay + f21 * az
        J[2, col] = f02 * ax + f12 * ay + f22 * az
        J[3, col] = ay * oz - az * oy
        J[4, col] = az * ox - ax * oz
        J[5, col] = ax * oy - ay * ox

    # E = Fᵀ · R_ref (rotation error in frame coordinates)
    w, x, y, z = ref_quat[0], ref_quat[1], ref_quat[2], ref_quat[3]
    r00 = 1.0 - 2.0 * (y * y + z * z)
    r01 = 2.0 * (x * y - w * z)
    r02 = 2.0 * (x * z + w * y)
    r10 = 2.0 * (x * y + w * z)
    r11 = 1.0 - 2.0 * (x * x + z * z)
    r12 = 2.0 * (y * z - w * x)
    r20 = 2.0 * (x * z - w * y)
    r21 = 2.0 * (y * z + w * x)
    r22 = 1.0 - 2.0 * (x * x + y * y)
    e00 = f00 * r00 + f10 * r10 + f20 * r20
    e01 = f00 * r01 + f10 * r11 + f20 * r21
    e02 = f00 * r02 + f10 * r12 + f20 * r22
    e10 = f01 * r00 + f11 * r10 + f21 * r20
    e11 = f01 * r01 + f11 * r11 + f21 * r21
    e12 = f01 * r02 + f11 * r12 + f21 * r22
    e20 = f02 * r00 + f12 * r10 + f22 * r20
    e21 = f02 * r01 + f12 * r11 + f22 * r21
    e22 = f02 * r02 + f12 * r12 + f22 * r22
    # E -> quaternion (Shepperd) -> log; quaternion route stays stable near pi
    tr = e00 + e11 + e22
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        qw = 0.25 * s
        qx = (e21 - e12) / s
        qy = (e02 - e20) / s
        qz = (e10 - e01) / s
    elif e00 >= e11 and e00 >= e22:
        s = np.sqrt(1.0 + e00 - e11 - e22) * 2.0
        qw = (e21 - e12) / s
        qx = 0.25 * s
        qy = (e01 + e10) / s
        qz = (e02 + e20) / s
    elif e11 >= e22:
        s = np.sqrt(1.0 + e11 - e00 - e22) * 2.0
        qw = (e02 - e20) / s
        qx = (e01 + e10) / s
        qy = 0.25 * s
        qz = (e12 + e21) / s
    else:
        s = np.sqrt(1.0 + e22 - e00 - e11) * 2.0
        qw = (e10 - e01) / s
        qx = (e02 + e20) / s
        qy = (e12 + e21) / s
        qz = 0.25 * s
    if qw < 0.0:
        qw, qx, qy, qz = -qw, -qx, -qy, -qz
    vn = np.sqrt(qx * qx + qy * qy + qz * qz)
    if vn < 1e-8:
        scale2 = 2.0 / qw if qw > 0.0 else 2.0
    else:
        scale2 = 2.0 * np.arctan2(vn, qw) / vn
    p_out[0] = gain * scale2 * qx + ff[0]
    p_out[1] = gain * scale2 * qy + ff[1]
    p_out[2] = gain * scale2 * qz + ff[2]
    p_out[3] = gain * (ref_pos[0] - px) + ff[3]
    p_out[4] = gain * (ref_pos[1] - py) + ff[4]
    p_out[5] = gain * (ref_pos[2] - pz) + ff[5]

    # frame quaternion for callers (same Shepperd branch structure on F)
    trf = f00 + f11 + f22
    if trf > 0.0:
        s = np.sqrt(trf + 1.0) * 2.0
        ow = 0.25 * s
        ox = (f21 - f12) / s
        oy = (f02 - f20) / s
        oz = (f10 - f01) / s
    elif f00 >= f11 and f00 >= f22:
        s = np.sqrt(1.0 + f00 - f11 - f22) * 2.0
        ow = (f21 - f12) / s
        ox = 0.25 * s
        oy = (f01 + f10) / s
        oz = (f02 + f20) / s
    elif f11 >= f22:
        s = np.sqrt(1.0 + f11 - f00 - f22) * 2.0
        ow = (f02 - f20) / s
        ox = (f01 + f10) / s
        oy = 0.25 * s
        oz = (f12 + f21) / s
    else:
        s = np.sqrt(1.0 + f22 - f00 - f11) * 2.0
        ow = (f10 - f01) / s
        ox = (f02 + f20) / s
        oy = (f12 + f21) / s
        oz = 0.25 * s
    if ow < 0.0:
        ow, ox, oy, oz = -ow, -ox, -oy, -oz
    pose_out[0] = ow
    pose_out[1] = ox
    pose_out[2] = oy
    pose_out[3] = oz
    pose_out[4] = px
    pose_out[5] = py
    pose_out[6] = pz


@njit(cache=True)
def segment_closest_points(p1, q1, p2, q2, out_a, out_b):
    """Closest points between segments [p1,q1] and [p2,q2] (Ericson's method)."""
    d1x = q1[0] - p1[0]
    d1y = q1[1] - p1[1]
    d1z = q1[2] - p1[2]
    d2x = q2[0] - p2[0]
    d2y = q2[1] - p2[1]
    d2z = q2[2] - p2[2]
    rx = p1[0] - p2[0]
    ry = p1[1] - p2[1]
    rz = p1[2] - p2[2]
    a = d1x * d1x + d1y * d1y + d1z * d1z
    e = d2x * d2x + d2y * d2y + d2z * d2z
    f = d2x * rx + d2y * ry + d2z * rz
    eps = 1e-14
    if a <= eps and e <= eps:
        s = 0.0
        t = 0.0
    elif a <= eps:
        s = 0.0
        t = min(max(f / e, 0.0), 1.0)
    else:
        c = d1x * rx + d1y * ry + d1z * rz
        if e <= eps:
            t = 0.0
            s = min(max(-c / a, 0.0), 1.0)
        else:
            b = d1x * d2x + d1y * d2y + d1z * d2z
            denom = a * e - b * b
            if denom > eps:
                s = min(max((b * f - c * e) / denom, 0.0), 1.0)
            else:
                s = 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = min(max(-c / a, 0.0), 1.0)
            elif t > 1.0:
                t = 1.0
                s = min(max((b - c) / a, 0.0), 1.0)
    out_a[0] = p1[0] + d1x * s
    out_a[1] = p1[1] + d1y * s
    out_a[2] = p1[2] + d1z * s
    out_b[0] = p2[0] + d2x * t
    out_b[1] = p2[1] + d2y * t
    out_b[2] = p2[2] + d2z * t


@njit(cache=True)
def collision_batch(seg_start, seg_end, radius, link_rot, link_pos, shape_link, pair_a, pair_b, pt_a, pt_b, axis_out, dist_out):
    """Signed separation for every collision pair.

    Spheres are zero-length segments, so one segment-segment query covers
    sphere/sphere, sphere/capsule and capsule/capsule.  Axis points from
    shape a to shape b; distance is negative once the surfaces interpenetrate.
    """
    npairs = pair_a.shape[0]
    nshapes = seg_start.shape[0]
    sw = np.empty((nshapes, 3))
    ew = np.empty((nshapes, 3))
    for s in range(nshapes):
        l = shape_link[s]
        R = link_rot[l]
        for k in range(3):
            sw[s, k] = (
                link_pos[l, k]
                + R[k, 0] * seg_start[s, 0]
                + R[k, 1] * seg_start[s, 1]
                + R[k, 2] * seg_start[s, 2]
            )
            ew[s, k] = (
                link_pos[l, k]
                + R[k, 0] * seg_end[s, 0]
                + R[k, 1] * seg_end[s, 1]
                + R[k, 2] * seg_end[s, 2]
            )
    ca = np.empty(3)
    cb = np.empty(3)
    for p in range(npairs):
        ia = pair_a[p]
        ib = pair_b[p]
        segment_closest_points(sw[ia], ew[ia], sw[ib], ew[ib], ca, cb)
        dx = cb[0] - ca[0]
        dy = cb[1] - ca[1]
        dz = cb[2] - ca[2]
        cdist = np.sqrt(dx * dx + dy * dy + dz * dz)
        if cdist < 1e-12:
            # coincident core points: fixed fallback axis keeps output deterministic
            ux, uy, uz = 0.0, 0.0, 1.0
        else:
            ux = dx / cdist
            uy = dy / cdist
            uz = dz / cdist
        ra = radius[ia]
        rb = radius[ib]
        dist_out[p] = cdist - ra - rb
        axis_out[p, 0] = ux
        axis_out[p, 1] = uy
        axis_out[p, 2] = uz
        pt_a[p, 0] = ca[0] + ux * ra
        pt_a[p, 1] = ca[1] + uy * ra
        pt_a[p, 2] = ca[2] + uz * ra
        pt_b[p, 0] = cb[0] - ux * rb
        pt_b[p, 1] = cb[1] - uy * rb
        pt_b[p, 2] = cb[2] - uz * rb


@njit(cache=True)
def collision_constraint_rows(link_rot, link_pos, axis_w, ancestors, shape_link, pair_a, pair_b, pt_a, pt_b, axis, rows):
    """One row per pair: axis . (Jp_a - Jp_b) restricted to linear velocity.

    Positive row value = shapes approaching along the collision axis.
    """
    npairs = pair_a.shape[0]
    nj = axis_w.shape[0]
    rows[:] = 0.0
    for p in range(npairs):
        la = shape_link[pair_a[p]]
        lb = shape_link[pair_b[p]]
        ux = axis[p, 0]
        uy = axis[p, 1]
        uz = axis[p, 2]
        # base columns
        R0 = link_rot[0]
        for c in range(3):
            bx = R0[0, c]
            by = R0[1, c]
            bz = R0[2, c]
            rax = pt_a[p, 0] - link_pos[0, 0]
            ray = pt_a[p, 1] - link_pos[0, 1]
            raz = pt_a[p, 2] - link_pos[0, 2]
            rbx = pt_b[p, 0] - link_pos[0, 0]
            rby = pt_b[p, 1] - link_pos[0, 1]
            rbz = pt_b[p, 2] - link_pos[0, 2]
            vax = by * raz - bz * ray
            vay = bz * rax - bx * raz
            vaz = bx * ray - by * rax
            vbx = by * rbz - bz * rby
            vby = bz * rbx - bx * rbz
            vbz = bx * rby - by * rbx
            rows[p, c] = ux * (vax - vbx) + uy * (vay - vby) + uz * (vaz - vbz)
        # base linear columns cancel (rigid translation moves both points equally)
        for j in range(nj):
            on_a = ancestors[la, j]
            on_b = ancestors[lb, j]
            if not on_a and not on_b:
                continue
            axw = axis_w[j, 0]
            ayw = axis_w[j, 1]
            azw = axis_w[j, 2]
            val = 0.0
            if on_a:
                px = pt_a[p, 0] - link_pos[j + 1, 0]
                py = pt_a[p, 1] - link_pos[j + 1, 1]
                pz = pt_a[p, 2] - link_pos[j + 1, 2]
                val += ux * (ayw * pz - azw * py) + uy * (azw * px - axw * pz) + uz * (axw * py - ayw * px)
            if on_b:
                px = pt_b[p, 0] - link_pos[j + 1, 0]
                py = pt_b[p, 1] - link_pos[j + 1, 1]
                pz = pt_b[p, 2] - link_pos[j + 1, 2]
                val -= ux * (ayw * pz - azw * py) + uy * (azw * px - axw * pz) + uz * (axw * py - ayw * px)
            rows[p, 6 + j] = val
