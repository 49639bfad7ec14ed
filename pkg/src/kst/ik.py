"""Differential IK: per-tick task assembly, QP construction, solve, integrate.

Decision variable is the generalized velocity v (6 base + joints).  The cost
stacks weighted task rows (J v should match gain * error + feedforward),
a nominal-posture pull on actuated joints and a velocity penalty; constraints
are per-joint velocity boxes tightened by position limits, per-edge CoM
containment rows and pairwise collision approach limits.  The solved velocity
integrates the internal desired configuration, which is hard-clamped to the
position limits afterward (the box bounds make the clamp a no-op up to solver
tolerance).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import Pose, Twist, integrate_pose
from .kernels import (
    centroidal_momentum_matrix as _cmm_kernel,
    com_position as _com_kernel,
    spatial_task_update,
)
from .model import (
    JointConfiguration,
    JointVelocity,
    KinematicsWorkspace,
    RobotModel,
    collision_rows_into,
    update_kinematics,
)
from .qp import QuadraticProgram, solve as qp_solve

AXES = ("wx", "wy", "wz", "x", "y", "z")


_MASK_CACHE: dict = {}


def axis_mask(*names: str) -> np.ndarray:
    """Selection mask over AXES; cached, treat the result as read-only."""
    mask = _MASK_CACHE.get(names)
    if mask is None:
        mask = np.zeros(6, dtype=bool)
        for nm in names:
            mask[AXES.index(nm)] = True
        mask.setflags(write=False)
        _MASK_CACHE[names] = mask
    return mask


@dataclass
class MotionTask:
    """One row block of the IK objective.

    kind "spatial_pose": 6-axis pose tracking of a named frame, rows selected
    by ``selection`` over (wx, wy, wz, x, y, z); angular rows live in the
    frame's own coordinates, linear rows in world.
    kind "com": ground-plane CoM tracking (selection ignored, rows x/y).
    kind "momentum_min": drive centroidal angular momentum toward zero.
    """

    kind: str
    frame: str = ""
    weight: float = 1.0
    gain: float = 0.0
    selection: np.ndarray = field(default_factory=lambda: np.ones(6, dtype=bool))
    reference: Pose = field(default_factory=Pose)
    feedforward: Twist = field(default_factory=Twist)


@dataclass
class IKConfig:
    dt_tick: float = 0.001
    weight_hand: float = 10.0
    weight_chest: float = 1.0
    weight_pelvis: float = 5.0
    weight_com: float = 20.0
    weight_momentum: float = 0.1
    weight_foot: float = 50.0          # stance/swing tracking set by the runtime
    task_gain: float = 50.0            # 1/s proportional feedback on task errors
    c_nom: float = 0.05
    c_vd: float = 0.01
    nominal_gain: float = 1.0          # 1/s pull toward q_nom
    q_nom: Optional[np.ndarray] = None # default: configuration at session start
    velocity_bound_scale: float = 1.0  # scales the model's per-joint velocity limits
    base_angular_bound: float = 10.0   # rad/s
    base_linear_bound: float = 5.0     # m/s
    collision_activation: float = 0.05     # m, rows added below this distance
    collision_min_separation: float = 0.01
    com_margin: float = 0.02           # m, support polygon shrink
    com_mode: str = "balance_hold"     # balance_hold | track_user
    # rhs floor for violated constraint rows: an already-violated state asks for
    # at most this inward/separating speed, keeping the QP feasible
    recovery_speed: float = 0.5        # m/s

    def validate(self) -> None:
        if self.dt_tick <= 0:
            raise ValueError("dt_tick must be positive")
        for nm in ("weight_hand", "weight_chest", "weight_pelvis", "weight_com",
                   "weight_momentum", "weight_foot", "task_gain", "c_nom", "c_vd",
                   "nominal_gain"):
            if getattr(self, nm) < 0:
                raise ValueError(f"{nm} must be >= 0")
        if not self.collision_activation > self.collision_min_separation >= 0:
            raise ValueError("need collision_activation > min_separation >= 0")
        if self.com_mode not in ("balance_hold", "track_user"):
            raise ValueError(f"unknown com_mode '{self.com_mode}'")
        if self.recovery_speed <= 0:
            raise ValueError("recovery_speed must be positive")


def convex_hull_xy(points: np.ndarray) -> np.ndarray:
    """Counter-clockwise convex hull (Andrew's monotone chain) of (N,2) points."""
    pts = sorted({(float(p[0]), float(p[1])) for p in points})
    if len(pts) <= 2:
        return np.asarray(pts, dtype=float).reshape(len(pts), 2)

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2:
                ox, oy = out[-2]
                ax, ay = out[-1]
                if (ax - ox) * (p[1] - oy) - (ay - oy) * (p[0] - ox) <= 1e-15:
                    out.pop()
                else:
                    break
            out.append(p)
        return out

    lower = half(pts)
    upper = half(reversed(pts))
    return np.asarray(lower[:-1] + upper[:-1], dtype=float)


@dataclass
class SupportPolygon:
    """Convex CCW polygon in the ground plane (world xy)."""

    vertices: np.ndarray
    _normals: Optional[np.ndarray] = field(default=None, repr=False)
    _offsets: Optional[np.ndarray] = field(default=None, repr=False)

    def _edge_geometry(self):
        # vertices are fixed per instance; cache the edge lines
        if self._normals is None:
            V = self.vertices
            T = np.roll(V, -1, axis=0) - V
            norms = np.hypot(T[:, 0], T[:, 1])
            norms[norms < 1e-12] = 1.0
            # CCW winding puts the interior on the left of each edge
            self._normals = np.stack([-T[:, 1], T[:, 0]], axis=1) / norms[:, None]
            self._offsets = (self._normals * V).sum(axis=1)
        return self._normals, self._offsets

    def edge_rows(self, point: np.ndarray):
        """Inward normals and distances of ``point`` to each edge line."""
        normals, offsets = self._edge_geometry()
        dists = normals @ point[:2] - offsets
        return normals, dists

    def contains(self, point: np.ndarray, margin: float = 0.0) -> bool:
        _, dists = self.edge_rows(point)
        return bool(np.all(dists >= margin))

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)


def build_support_polygon(model: RobotModel, stance: dict) -> SupportPolygon:
    """Hull of both feet's sole polygons placed at the given world foot poses."""
    pts = []
    for frame, pose in stance.items():
        poly = model.foot_polygons.get(frame)
        if poly is None:
            raise KeyError(f"model '{model.name}' declares no foot polygon for frame '{frame}'")
        for v in poly:
            w = pose.transform_point(np.array([v[0], v[1], 0.0]))
            pts.append(w[:2])
    return SupportPolygon(convex_hull_xy(np.asarray(pts)))


def build_tasks(predictions: dict, config: IKConfig,
                com_hold_target: np.ndarray) -> list:
    """Standard task set from estimator predictions.

    ``predictions`` maps left_hand / right_hand / chest / pelvis / com to
    Prediction-like objects (desired, feedforward, active); inactive or absent
    bodies contribute no task.  The CoM task always exists: in balance_hold
    mode (or when the user CoM is inactive) it holds ``com_hold_target``.
    """
    tasks = []
    for frame in ("left_hand", "right_hand"):
        pred = predictions.get(frame)
        if pred is not None and pred.active:
            tasks.append(MotionTask("spatial_pose", frame, config.weight_hand,
                                    config.task_gain, axis_mask(*AXES),
                                    pred.desired, pred.feedforward))
    chest = predictions.get("chest")
    if chest is not None and chest.active:
        tasks.append(MotionTask("spatial_pose", "chest", config.weight_chest,
                                config.task_gain, axis_mask("wx", "wy", "wz"),
                                chest.desired, chest.feedforward))
    pelvis = predictions.get("pelvis")
    if pelvis is not None and pelvis.active:
        tasks.append(MotionTask("spatial_pose", "pelvis", config.weight_pelvis,
                                config.task_gain, axis_mask("wx", "wy", "wz", "z"),
                                pelvis.desired, pelvis.feedforward))
    com_pred = predictions.get("com")
    if config.com_mode == "track_user" and com_pred is not None and com_pred.active:
        tasks.append(MotionTask("com", "", config.weight_com, config.task_gain,
                                axis_mask("x", "y"), com_pred.desired, com_pred.feedforward))
    else:
        hold = Pose(np.array([com_hold_target[0], com_hold_target[1], 0.0]))
        tasks.append(MotionTask("com", "", config.weight_com, config.task_gain,
                                axis_mask("x", "y"), hold, Twist.zero()))
    tasks.append(MotionTask("momentum_min", "", config.weight_momentum, 0.0,
                            axis_mask("wx", "wy", "wz")))
    return tasks


@dataclass
class SolveStats:
    status: str
    iterations: int
    kkt_residual: float
    active_collision_rows: int
    com_rows: int
    clamped_joints: int


@dataclass
class IKState:
    """The engine's internal desired state (distinct from any measured state)."""

    q: JointConfiguration
    v: np.ndarray                      # last solved velocity, warm start
    ws: KinematicsWorkspace
    fault_count: int = 0
    clamp_count: int = 0
    # stacked task-row scratch, grown on demand
    rows_buf: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    p_buf: np.ndarray = field(default_factory=lambda: np.zeros(0))
    w_buf: np.ndarray = field(default_factory=lambda: np.zeros(0))
    _p6: np.ndarray = field(default_factory=lambda: np.zeros(6))
    _ff6: np.ndarray = field(default_factory=lambda: np.zeros(6))
    _pose7: np.ndarray = field(default_factory=lambda: np.zeros(7))

    def ensure_rows(self, rows: int, n: int) -> None:
        if self.rows_buf.shape[0] < rows or self.rows_buf.shape[1] != n:
            self.rows_buf = np.zeros((rows, n))
            self.p_buf = np.zeros(rows)
            self.w_buf = np.zeros(rows)

    @staticmethod
    def from_configuration(model: RobotModel, q: JointConfiguration) -> "IKState":
        st = IKState(q.copy(), np.zeros(model.num_velocities), KinematicsWorkspace(model))
        st.ensure_rows(64, model.num_velocities)
        return st


def assemble_qp(model: RobotModel, state: IKState, tasks: list, config: IKConfig,
                support: Optional[SupportPolygon] = None) -> QuadraticProgram:
    """Build the tick QP at the state's current kinematics.

    Callers must have refreshed ``state.ws`` (update_kinematics + collision
    rows); ``tick`` does this.  Empty task lists produce a regularized
    hold-still problem.
    """
    n = model.num_velocities
    dt = config.dt_tick
    ws = state.ws
    state.ensure_rows(max(6 * len(tasks) + 8, 64), n)

    need_com = any(t.kind in ("com", "momentum_min") for t in tasks) or support is not None
    if need_com:
        _com_kernel(ws.link_rot, ws.link_pos, model.mass, model.com_local, ws.com)
        _cmm_kernel(ws.link_rot, ws.link_pos, ws.axis_w, model.ancestors,
                    model.mass, model.com_local, model.inertia_local, ws.com, ws.cmm)

    R = state.rows_buf
    pv = state.p_buf
    wv = state.w_buf
    r = 0
    for task in tasks:
        if task.kind == "spatial_pose":
            fd = model.frames.get(task.frame)
            if fd is None:
                raise KeyError(f"model '{model.name}' has no frame '{task.frame}'")
            ref = task.reference
            state._ff6[0:3] = task.feedforward.angular
            state._ff6[3:6] = task.feedforward.linear
            spatial_task_update(ws.link_rot, ws.link_pos, ws.axis_w, model.ancestors,
                                fd.link, fd.rot, fd.pos, ref.orientation, ref.position,
                                task.gain, state._ff6, ws.jac, state._p6, state._pose7)
            sel = task.selection
            if sel.all():
                k = 6
                R[r:r + 6] = ws.jac
                pv[r:r + 6] = state._p6
            else:
                k = int(sel.sum())
                R[r:r + k] = ws.jac[sel]
                pv[r:r + k] = state._p6[sel]
        elif task.kind == "com":
            k = 2
            R[r:r + 2] = ws.cmm[3:5]
            R[r:r + 2] /= model.total_mass
            pv[r] = task.gain * (task.reference.position[0] - ws.com[0]) + task.feedforward.linear[0]
            pv[r + 1] = task.gain * (task.reference.position[1] - ws.com[1]) + task.feedforward.linear[1]
        elif task.kind == "momentum_min":
            k = 3
            R[r:r + 3] = ws.cmm[0:3]
            pv[r:r + 3] = 0.0
        else:
            raise ValueError(f"unknown task kind '{task.kind}'")
        wv[r:r + k] = task.weight
        r += k

    Rv = R[:r]
    Rw = Rv * wv[:r, None]
    H = Rw.T @ Rv
    H = 0.5 * (H + H.T)
    g = -(Rw.T @ pv[:r])
    diag = H.ravel()[:: n + 1]
    diag += config.c_vd
    diag[6:] += config.c_nom
    if config.c_nom > 0.0:
        q_nom = state.q.joint_positions if config.q_nom is None else config.q_nom
        v_nom = config.nominal_gain * (q_nom - state.q.joint_positions)
        g[6:] -= config.c_nom * v_nom

    lb = np.empty(n)
    ub = np.empty(n)
    lb[0:3] = -config.base_angular_bound
    ub[0:3] = config.base_angular_bound
    lb[3:6] = -config.base_linear_bound
    ub[3:6] = config.base_linear_bound
    # limit-aware boxes; the clip keeps lb <= ub even if q is past a limit,
    # in which case only limit-restoring velocities remain admissible
    vmax = config.velocity_bound_scale * model.velocity_limit
    qj = state.q.joint_positions
    lb[6:] = np.clip((model.q_min - qj) / dt, -vmax, vmax)
    ub[6:] = np.clip((model.q_max - qj) / dt, -vmax, vmax)

    crows = []
    crhs = []
    if support is not None and len(support.vertices) >= 3:
        normals, dists = support.edge_rows(ws.com)
        J_com = ws.cmm[3:5] / model.total_mass
        crows.append(-(normals @ J_com))
        crhs.append(np.maximum((dists - config.com_margin) / dt, -config.recovery_speed))
    if len(model.collision_pairs):
        collision_rows_into(model, ws)
        near = ws.pair_dist < config.collision_activation
        if near.any():
            crows.append(ws.coll_rows[near])
            crhs.append(np.maximum((ws.pair_dist[near] - config.collision_min_separation) / dt,
                                   -config.recovery_speed))
    if crows:
        C = np.concatenate(crows, axis=0)
        d = np.concatenate(crhs)
    else:
        C = np.zeros((0, n))
        d = np.zeros(0)
    return QuadraticProgram(H, g, lb, ub, C, d)


@dataclass
class TickResult:
    q: JointConfiguration
    v_d: JointVelocity
    stats: SolveStats


def tick(state: IKState, model: RobotModel, tasks: list, config: IKConfig,
         support: Optional[SupportPolygon] = None) -> TickResult:
    """One IK step: refresh kinematics, assemble, solve warm-started, integrate."""
    update_kinematics(model, state.q, state.ws)
    qp = assemble_qp(model, state, tasks, config, support)
    # H = R^T W R + diagonal regularizers is PD and symmetric by construction,
    # skip the factor and shape checks
    sol = qp_solve(qp, warm_start=state.v, check_pd=False, validate=False)
    n_com = len(support.vertices) if support is not None and len(support.vertices) >= 3 else 0
    if sol.status == "infeasible":
        v = np.zeros(model.num_velocities)
        state.fault_count += 1
    else:
        v = sol.x
    state.v = v.copy()
    twist = Twist(v[0:3].copy(), v[3:6].copy())
    base = integrate_pose(state.q.base_pose, twist, config.dt_tick)
    qj = state.q.joint_positions + v[6:] * config.dt_tick
    clamped = int(np.count_nonzero((qj < model.q_min) | (qj > model.q_max)))
    if clamped:
        np.clip(qj, model.q_min, model.q_max, out=qj)
        state.clamp_count += clamped
    state.q = JointConfiguration(base, qj)
    stats = SolveStats(sol.status, sol.iterations, sol.kkt_residual,
                       int(qp.d.shape[0]) - n_com, n_com, clamped)
    return TickResult(state.q.copy(), JointVelocity(twist, v[6:].copy()), stats)
