"""Robot model: kinematic tree, mass properties, collision primitives.

Models load from a JSON document with top-level keys ``links[]``, ``joints[]``,
``frames{}``, ``collision_shapes[]``, ``collision_pairs[]``, ``foot_polygons{}``
(radians / meters / kilograms).  Exactly one joint has type ``floating-base``;
its child is the root link and all remaining joints are revolute.  Joints must
be listed parent-before-child; the file order of revolute joints defines the
layout of the joint position vector and of generalized-velocity columns 6..n.

A loaded :class:`RobotModel` is immutable and shareable across threads.  Query
functions allocate a small workspace per call; hot-path callers reuse a
:class:`KinematicsWorkspace` explicitly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Pose, Twist, quat_from_matrix, quat_from_yaw_pitch_roll, quat_to_matrix
from .kernels import (
    centroidal_momentum_matrix as _cmm_kernel,
    collision_batch,
    collision_constraint_rows,
    com_position as _com_kernel,
    fk_links,
    point_jacobian,
)


class ModelError(ValueError):
    """Raised when a model file fails to parse or violates an invariant."""

    def __init__(self, path, problems):
        self.path = str(path)
        self.problems = list(problems)
        lines = "\n".join("  - " + p for p in self.problems)
        super().__init__(f"invalid model file {self.path}:\n{lines}")


@dataclass(frozen=True)
class FrameDef:
    link: int
    rot: np.ndarray     # 3x3, frame orientation in link coordinates
    pos: np.ndarray     # offset in link coordinates


@dataclass(frozen=True)
class RobotModel:
    name: str
    link_names: tuple
    joint_names: tuple
    joint_parent: np.ndarray      # parent link index per revolute joint
    origin_rot: np.ndarray        # (nj,3,3) parent link -> joint frame
    origin_pos: np.ndarray        # (nj,3)
    joint_axis: np.ndarray        # (nj,3) unit, joint frame
    q_min: np.ndarray
    q_max: np.ndarray
    velocity_limit: np.ndarray
    mass: np.ndarray              # per link
    com_local: np.ndarray         # (L,3) link CoM in link frame
    inertia_local: np.ndarray     # (L,3,3) about link CoM, link frame
    ancestors: np.ndarray         # (L,nj) bool, joint j on root->link path
    frames: dict                  # name -> FrameDef
    shape_names: tuple
    shape_link: np.ndarray        # link index per collision shape
    shape_start: np.ndarray       # (S,3) segment start, link frame (== end for spheres)
    shape_end: np.ndarray
    shape_radius: np.ndarray
    collision_pairs: tuple        # ((name_a, name_b), ...)
    pair_a: np.ndarray            # shape indices of the declared pairs
    pair_b: np.ndarray
    foot_polygons: dict           # frame name -> (V,2) vertices in the frame's xy plane
    hand_mounting: dict           # side -> quaternion, controller frame -> hand frame

    @property
    def num_links(self) -> int:
        return len(self.link_names)

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    @property
    def num_velocities(self) -> int:
        return 6 + len(self.joint_names)

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    def joint_index(self, name: str) -> int:
        return self.joint_names.index(name)

    def default_configuration(self) -> "JointConfiguration":
        q = np.clip(np.zeros(self.num_joints), self.q_min, self.q_max)
        return JointConfiguration(Pose.identity(), q)


@dataclass
class JointConfiguration:
    """Floating-base pose plus one position per revolute joint."""

    base_pose: Pose
    joint_positions: np.ndarray

    def copy(self) -> "JointConfiguration":
        return JointConfiguration(self.base_pose.copy(), self.joint_positions.copy())


@dataclass
class JointVelocity:
    """Floating-base twist plus one rate per revolute joint.

    Vector layout [base angular (body), base linear (world), joint rates],
    matching Jacobian/CMM columns.
    """

    base_twist: Twist
    joint_rates: np.ndarray

    def copy(self) -> "JointVelocity":
        return JointVelocity(self.base_twist.copy(), self.joint_rates.copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.base_twist.angular, self.base_twist.linear, self.joint_rates])

    @staticmethod
    def from_vector(v: np.ndarray) -> "JointVelocity":
        v = np.asarray(v, dtype=float)
        return JointVelocity(Twist(v[0:3].copy(), v[3:6].copy()), v[6:].copy())

    @staticmethod
    def zero(model: RobotModel) -> "JointVelocity":
        return JointVelocity(Twist.zero(), np.zeros(model.num_joints))


@dataclass
class ShapeProximity:
    shape_a: str
    shape_b: str
    point_a: np.ndarray
    point_b: np.ndarray
    axis: np.ndarray       # unit vector from a toward b
    distance: float        # signed separation, negative when penetrating


def _as_vec3(value, problems, where):
    try:
        v = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        problems.append(f"{where}: expected a 3-vector, got {value!r}")
        return np.zeros(3)
    if v.shape != (3,):
        problems.append(f"{where}: expected a 3-vector, got shape {v.shape}")
        return np.zeros(3)
    return v


def _origin_transform(spec, problems, where):
    xyz = _as_vec3(spec.get("xyz", [0.0, 0.0, 0.0]), problems, where + ".xyz")
    rpy = spec.get("rpy", [0.0, 0.0, 0.0])
    rpy = _as_vec3(rpy, problems, where + ".rpy")
    quat = quat_from_yaw_pitch_roll(rpy[2], rpy[1], rpy[0])
    return quat_to_matrix(quat), xyz


def _inertia_tensor(value, problems, where):
    arr = np.asarray(value, dtype=float)
    if arr.shape == (3,):
        return np.diag(arr)
    if arr.shape == (3, 3):
        if not np.allclose(arr, arr.T, atol=1e-9):
            problems.append(f"{where}: inertia tensor not symmetric")
        return 0.5 * (arr + arr.T)
    problems.append(f"{where}: inertia must be a diagonal 3-vector or 3x3 matrix")
    return np.eye(3) * 1e-3


def _polygon_is_convex(verts: np.ndarray) -> bool:
    n = len(verts)
    sign = 0.0
    for i in range(n):
        a = verts[i]
        b = verts[(i + 1) % n]
        c = verts[(i + 2) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if abs(cross) < 1e-12:
            continue
        if sign == 0.0:
            sign = np.sign(cross)
        elif np.sign(cross) != sign:
            return False
    return True


def load_model(path) -> RobotModel:
    """Parse and validate a model file; raises ModelError listing every problem."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelError(path, [f"cannot read file: {exc}"]) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(path, [f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from exc

    problems: list = []
    for key in ("links", "joints", "frames", "collision_shapes", "collision_pairs", "foot_polygons"):
        if key not in doc:
            problems.append(f"missing top-level key '{key}'")
    if problems:
        raise ModelError(path, problems)

    links = doc["links"]
    link_names = []
    for i, ln in enumerate(links):
        nm = ln.get("name")
        if not nm:
            problems.append(f"links[{i}]: missing name")
            nm = f"<links[{i}]>"
        if nm in link_names:
            problems.append(f"duplicate link name '{nm}'")
        link_names.append(nm)
        if float(ln.get("mass", 0.0)) < 0.0:
            problems.append(f"link '{nm}': negative mass")
    link_index = {nm: i for i, nm in enumerate(link_names)}

    root_joints = [j for j in doc["joints"] if j.get("type") == "floating-base"]
    if len(root_joints) != 1:
        problems.append(f"model must declare exactly one floating-base joint, found {len(root_joints)}")
        raise ModelError(path, problems)
    root_link_name = root_joints[0].get("child")
    if root_link_name not in link_index:
        problems.append(f"floating-base joint: unknown child link '{root_link_name}'")
        raise ModelError(path, problems)

    revolute = [j for j in doc["joints"] if j.get("type") != "floating-base"]
    joint_names = []
    parent_of_link = {root_link_name: None}
    joint_parent = []
    origin_rot = []
    origin_pos = []
    joint_axis = []
    q_min = []
    q_max = []
    vel_lim = []
    child_link_of = []
    for i, jn in enumerate(revolute):
        nm = jn.get("name", f"<joints[{i}]>")
        where = f"joint '{nm}'"
        if jn.get("type") != "revolute":
            problems.append(f"{where}: unsupported type '{jn.get('type')}'")
        if nm in joint_names:
            problems.append(f"duplicate joint name '{nm}'")
        joint_names.append(nm)
        parent = jn.get("parent")
        child = jn.get("child")
        if parent not in link_index:
            problems.append(f"{where}: unknown parent link '{parent}'")
            parent = root_link_name
        if child not in link_index:
            problems.append(f"{where}: unknown child link '{child}'")
        elif child in parent_of_link:
            problems.append(f"{where}: link '{child}' already has a parent joint (cyclic or duplicated tree edge)")
        elif parent not in parent_of_link:
            problems.append(f"{where}: parent link '{parent}' not yet connected; joints must be listed parent-before-child")
        else:
            parent_of_link[child] = nm
        joint_parent.append(link_index[parent])
        child_link_of.append(link_index.get(child, 0))
        rot, pos = _origin_transform(jn.get("origin", {}), problems, where + ".origin")
        origin_rot.append(rot)
        origin_pos.append(pos)
        ax = _as_vec3(jn.get("axis", [0, 0, 1]), problems, where + ".axis")
        norm = np.linalg.norm(ax)
        if norm < 1e-9:
            problems.append(f"{where}: zero-length axis")
            ax = np.array([0.0, 0.0, 1.0])
        else:
            ax = ax / norm
        joint_axis.append(ax)
        lim = jn.get("position_limits", [-np.pi, np.pi])
        lo, hi = float(lim[0]), float(lim[1])
        if not lo < hi:
            problems.append(f"{where}: q_min >= q_max ({lo} >= {hi})")
        q_min.append(lo)
        q_max.append(hi)
        vl = float(jn.get("velocity_limit", 10.0))
        if vl <= 0.0:
            problems.append(f"{where}: velocity limit must be positive")
        vel_lim.append(vl)

    orphans = [nm for nm in link_names if nm != root_link_name and nm not in parent_of_link]
    for nm in orphans:
        problems.append(f"link '{nm}' is not connected to the tree")

    # internal link order: root first, then revolute children in joint order
    order = [link_index[root_link_name]] + child_link_of
    if len(set(order)) == len(order) and len(order) == len(links) and not problems:
        pass
    elif len(order) != len(links) or len(set(order)) != len(order):
        problems.append("links/joints do not form a tree with one child link per joint")
    if problems:
        raise ModelError(path, problems)

    reordered = [links[i] for i in order]
    new_names = tuple(ln["name"] for ln in reordered)
    new_index = {nm: i for i, nm in enumerate(new_names)}
    nj = len(joint_names)
    L = len(new_names)

    mass = np.zeros(L)
    com_local = np.zeros((L, 3))
    inertia_local = np.zeros((L, 3, 3))
    for i, ln in enumerate(reordered):
        mass[i] = float(ln.get("mass", 0.0))
        com_local[i] = _as_vec3(ln.get("com", [0, 0, 0]), problems, f"link '{ln['name']}'.com")
        inertia_local[i] = _inertia_tensor(ln.get("inertia", [1e-4, 1e-4, 1e-4]), problems, f"link '{ln['name']}'.inertia")

    jp = np.array([new_index[link_names[p]] for p in joint_parent], dtype=np.int64)
    ancestors = np.zeros((L, nj), dtype=np.bool_)
    for j in range(nj):
        child = j + 1
        ancestors[child, j] = True
        ancestors[child] |= ancestors[jp[j]]

    frames = {}
    for nm, fr in doc["frames"].items():
        lk = fr.get("link")
        if lk not in new_index:
            problems.append(f"frame '{nm}': unknown link '{lk}'")
            continue
        rot, pos = _origin_transform(fr, problems, f"frame '{nm}'")
        frames[nm] = FrameDef(new_index[lk], rot, pos)

    shape_names = []
    shape_link = []
    shape_start = []
    shape_end = []
    shape_radius = []
    for i, sh in enumerate(doc["collision_shapes"]):
        nm = sh.get("name", f"<collision_shapes[{i}]>")
        where = f"collision shape '{nm}'"
        if nm in shape_names:
            problems.append(f"duplicate collision shape name '{nm}'")
        shape_names.append(nm)
        lk = sh.get("link")
        if lk not in new_index:
            problems.append(f"{where}: unknown link '{lk}'")
            shape_link.append(0)
        else:
            shape_link.append(new_index[lk])
        radius = float(sh.get("radius", 0.0))
        if radius <= 0.0:
            problems.append(f"{where}: radius must be > 0")
        shape_radius.append(radius)
        kind = sh.get("primitive", "sphere")
        if kind == "sphere":
            c = _as_vec3(sh.get("center", [0, 0, 0]), problems, where + ".center")
            shape_start.append(c)
            shape_end.append(c)
        elif kind == "capsule":
            shape_start.append(_as_vec3(sh.get("start", [0, 0, 0]), problems, where + ".start"))
            shape_end.append(_as_vec3(sh.get("end", [0, 0, 0]), problems, where + ".end"))
        else:
            problems.append(f"{where}: unknown primitive '{kind}'")
            shape_start.append(np.zeros(3))
            shape_end.append(np.zeros(3))
    shape_idx = {nm: i for i, nm in enumerate(shape_names)}

    pairs = []
    pair_a = []
    pair_b = []
    for i, pr in enumerate(doc["collision_pairs"]):
        if len(pr) != 2 or pr[0] not in shape_idx or pr[1] not in shape_idx:
            problems.append(f"collision_pairs[{i}]: must name two declared shapes, got {pr!r}")
            continue
        if shape_link[shape_idx[pr[0]]] == shape_link[shape_idx[pr[1]]]:
            problems.append(f"collision_pairs[{i}]: both shapes attach to the same link")
            continue
        pairs.append((pr[0], pr[1]))
        pair_a.append(shape_idx[pr[0]])
        pair_b.append(shape_idx[pr[1]])

    foot_polygons = {}
    for nm, verts in doc["foot_polygons"].items():
        if nm not in frames:
            problems.append(f"foot polygon '{nm}': no frame with that name")
            continue
        v = np.asarray(verts, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            problems.append(f"foot polygon '{nm}': need >= 3 [x, y] vertices")
            continue
        if not _polygon_is_convex(v):
            problems.append(f"foot polygon '{nm}': vertices are not convex")
            continue
        foot_polygons[nm] = v

    hand_mounting = {"left": np.array([1.0, 0, 0, 0]), "right": np.array([1.0, 0, 0, 0])}
    for side, spec in doc.get("hand_mounting", {}).items():
        if side not in hand_mounting:
            problems.append(f"hand_mounting: side must be left or right, got '{side}'")
            continue
        rot, _ = _origin_transform(spec, problems, f"hand_mounting.{side}")
        hand_mounting[side] = quat_from_matrix(rot)

    if problems:
        raise ModelError(path, problems)

    return RobotModel(
        name=doc.get("name", path.stem),
        link_names=new_names,
        joint_names=tuple(joint_names),
        joint_parent=jp,
        origin_rot=np.array(origin_rot).reshape(nj, 3, 3),
        origin_pos=np.array(origin_pos).reshape(nj, 3),
        joint_axis=np.array(joint_axis).reshape(nj, 3),
        q_min=np.array(q_min),
        q_max=np.array(q_max),
        velocity_limit=np.array(vel_lim),
        mass=mass,
        com_local=com_local,
        inertia_local=inertia_local,
        ancestors=ancestors,
        frames=frames,
        shape_names=tuple(shape_names),
        shape_link=np.array(shape_link, dtype=np.int64).reshape(len(shape_names)),
        shape_start=np.array(shape_start, dtype=float).reshape(len(shape_names), 3),
        shape_end=np.array(shape_end, dtype=float).reshape(len(shape_names), 3),
        shape_radius=np.array(shape_radius, dtype=float).reshape(len(shape_names)),
        collision_pairs=tuple(pairs),
        pair_a=np.array(pair_a, dtype=np.int64).reshape(len(pairs)),
        pair_b=np.array(pair_b, dtype=np.int64).reshape(len(pairs)),
        foot_polygons=foot_polygons,
        hand_mounting=hand_mounting,
    )


class KinematicsWorkspace:
    """Caller-owned scratch for the kernels; reuse across ticks to avoid allocation."""

    def __init__(self, model: RobotModel):
        L = model.num_links
        nj = model.num_joints
        n = model.num_velocities
        npairs = len(model.collision_pairs)
        self.link_rot = np.empty((L, 3, 3))
        self.link_pos = np.empty((L, 3))
        self.axis_w = np.empty((max(nj, 1), 3))
        self.jac = np.empty((6, n))
        self.cmm = np.empty((6, n))
        self.com = np.empty(3)
        self.pt_a = np.empty((max(npairs, 1), 3))
        self.pt_b = np.empty((max(npairs, 1), 3))
        self.pair_axis = np.empty((max(npairs, 1), 3))
        self.pair_dist = np.empty(max(npairs, 1))
        self.coll_rows = np.empty((max(npairs, 1), n))


def update_kinematics(model: RobotModel, q: JointConfiguration, ws: KinematicsWorkspace) -> None:
    if q.joint_positions.shape != (model.num_joints,):
        raise ValueError(
            f"configuration has {q.joint_positions.shape[0]} joint positions, model '{model.name}' expects {model.num_joints}"
        )
    base_rot = quat_to_matrix(q.base_pose.orientation)
    fk_links(
        model.joint_parent, model.origin_rot, model.origin_pos, model.joint_axis,
        q.joint_positions, base_rot, q.base_pose.position, ws.link_rot, ws.link_pos, ws.axis_w,
    )


def frame_pose_from_workspace(model: RobotModel, ws: KinematicsWorkspace, frame: str) -> Pose:
    fd = _frame_def(model, frame)
    R = ws.link_rot[fd.link] @ fd.rot
    p = ws.link_pos[fd.link] + ws.link_rot[fd.link] @ fd.pos
    return Pose(p, quat_from_matrix(R))


def _frame_def(model: RobotModel, frame: str) -> FrameDef:
    fd = model.frames.get(frame)
    if fd is None:
        raise KeyError(f"model '{model.name}' has no frame '{frame}' (available: {sorted(model.frames)})")
    return fd


def forward_kinematics(model: RobotModel, q: JointConfiguration) -> dict:
    """World pose of every link and every named frame."""
    ws = KinematicsWorkspace(model)
    update_kinematics(model, q, ws)
    out = {}
    for i, nm in enumerate(model.link_names):
        out[nm] = Pose(ws.link_pos[i].copy(), quat_from_matrix(ws.link_rot[i]))
    for nm in model.frames:
        out[nm] = frame_pose_from_workspace(model, ws, nm)
    return out


def jacobian_into(model: RobotModel, ws: KinematicsWorkspace, frame: str, out: np.ndarray, expressed_at=None) -> Pose:
    """Fill ``out`` (6 x n) for ``frame``; angular rows rotated into the frame itself.

    Returns the frame pose so callers get both from one kinematics pass.
    Linear rows stay in world coordinates per the project convention.
    """
    fd = _frame_def(model, frame)
    pose = frame_pose_from_workspace(model, ws, frame)
    point = pose.position if expressed_at is None else np.asarray(expressed_at, dtype=float)
    point_jacobian(ws.link_rot, ws.link_pos, ws.axis_w, model.ancestors, fd.link, point, out)
    R = quat_to_matrix(pose.orientation)
    out[0:3] = R.T @ out[0:3]
    return pose


def geometric_jacobian(model: RobotModel, q: JointConfiguration, frame: str, expressed_at=None) -> np.ndarray:
    """6 x n Jacobian: rows 0-2 angular velocity of the frame (in the frame),
    rows 3-5 world linear velocity of ``expressed_at`` (default: frame origin)."""
    ws = KinematicsWorkspace(model)
    update_kinematics(model, q, ws)
    J = np.empty((6, model.num_velocities))
    jacobian_into(model, ws, frame, J, expressed_at)
    return J


def com_position(model: RobotModel, q: JointConfiguration) -> np.ndarray:
    ws = KinematicsWorkspace(model)
    update_kinematics(model, q, ws)
    _com_kernel(ws.link_rot, ws.link_pos, model.mass, model.com_local, ws.com)
    return ws.com.copy()


def centroidal_momentum_matrix(model: RobotModel, q: JointConfiguration) -> np.ndarray:
    """6 x n matrix A with A @ v = centroidal momentum; rows 0-2 angular about
    the CoM, rows 3-5 linear (= total mass times CoM velocity)."""
    ws = KinematicsWorkspace(model)
    update_kinematics(model, q, ws)
    _com_kernel(ws.link_rot, ws.link_pos, model.mass, model.com_local, ws.com)
    _cmm_kernel(
        ws.link_rot, ws.link_pos, ws.axis_w, model.ancestors,
        model.mass, model.com_local, model.inertia_local, ws.com, ws.cmm,
    )
    return ws.cmm.copy()


def collision_proximity(model: RobotModel, q: JointConfiguration, pairs=None) -> list:
    """Closest points / axis / signed distance for collision pairs.

    ``pairs`` is a list of (shape_name, shape_name); defaults to the pairs
    declared in the model file.  Results are computed once per unordered pair
    so that reversing a pair flips points and axis but reuses the identical
    distance value.
    """
    ws = KinematicsWorkspace(model)
    update_kinematics(model, q, ws)
    shape_idx = {nm: i for i, nm in enumerate(model.shape_names)}
    if pairs is None:
        named = list(model.collision_pairs)
    else:
        named = list(pairs)
    flipped = []
    ia = np.empty(len(named), dtype=np.int64)
    ib = np.empty(len(named), dtype=np.int64)
    for k, (a, b) in enumerate(named):
        if a not in shape_idx or b not in shape_idx:
            raise KeyError(f"unknown collision shape in pair ({a!r}, {b!r})")
        i, j = shape_idx[a], shape_idx[b]
        flipped.append(i > j)
        ia[k], ib[k] = (j, i) if i > j else (i, j)
    pt_a = np.empty((len(named), 3))
    pt_b = np.empty((len(named), 3))
    axis = np.empty((len(named), 3))
    dist = np.empty(len(named))
    if named:
        collision_batch(
            model.shape_start, model.shape_end, model.shape_radius,
            ws.link_rot, ws.link_pos, model.shape_link, ia, ib, pt_a, pt_b, axis, dist,
        )
    out = []
    for k, (a, b) in enumerate(named):
        if flipped[k]:
            out.append(ShapeProximity(a, b, pt_b[k].copy(), pt_a[k].copy(), -axis[k], float(dist[k])))
        else:
            out.append(ShapeProximity(a, b, pt_a[k].copy(), pt_b[k].copy(), axis[k].copy(), float(dist[k])))
    return out


def collision_rows_into(model: RobotModel, ws: KinematicsWorkspace) -> None:
    """Hot-path collision query into the workspace: distances, axes and the
    approach-speed constraint rows for all declared pairs."""
    if len(model.collision_pairs) == 0:
        return
    collision_batch(
        model.shape_start, model.shape_end, model.shape_radius,
        ws.link_rot, ws.link_pos, model.shape_link, model.pair_a, model.pair_b,
        ws.pt_a, ws.pt_b, ws.pair_axis, ws.pair_dist,
    )
    collision_constraint_rows(
        ws.link_rot, ws.link_pos, ws.axis_w, model.ancestors, model.shape_link,
        model.pair_a, model.pair_b, ws.pt_a, ws.pt_b, ws.pair_axis, ws.coll_rows,
    )


def com_jacobian(model: RobotModel, q: JointConfiguration) -> np.ndarray:
    """3 x n CoM velocity Jacobian (linear CMM block over total mass)."""
    A = centroidal_momentum_matrix(model, q)
    return A[3:6] / model.total_mass
