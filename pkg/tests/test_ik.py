import numpy as np
import pytest

from kst.estimation import Prediction
from kst.geometry import Pose, Twist
from kst.ik import (
    AXES,
    IKConfig,
    IKState,
    MotionTask,
    SupportPolygon,
    assemble_qp,
    axis_mask,
    build_support_polygon,
    build_tasks,
    convex_hull_xy,
    tick,
)
from kst.model import (
    JointConfiguration,
    collision_proximity,
    com_position,
    forward_kinematics,
    geometric_jacobian,
    update_kinematics,
)
from kst.qp import solve as qp_solve
from kst.runtime import DEFAULT_STANDING_POSTURE, initial_configuration

DT = 1e-3


def pred(position, orientation=None, active=True):
    q = np.array([1.0, 0.0, 0.0, 0.0]) if orientation is None else orientation
    return Prediction(Pose(np.asarray(position, float), q), Twist.zero(), active)


def planar_state(planar, q1, q2):
    q = JointConfiguration(Pose.identity(), np.array([q1, q2], dtype=float))
    state = IKState.from_configuration(planar, q)
    update_kinematics(planar, state.q, state.ws)
    return state


def nadia_standing(nadia):
    q = initial_configuration(nadia, DEFAULT_STANDING_POSTURE)
    state = IKState.from_configuration(nadia, q)
    update_kinematics(nadia, state.q, state.ws)
    return state


def standing_support(nadia, q):
    fk = forward_kinematics(nadia, q)
    return build_support_polygon(
        nadia, {"left_foot": fk["left_foot"], "right_foot": fk["right_foot"]})


def shoelace(vertices):
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


# ---------------------------------------------------------------------------
# support polygon geometry


def test_convex_hull_drops_interior_points():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0],
                    [0.5, 0.5], [0.2, 0.7], [0.5, 0.0]])
    hull = convex_hull_xy(pts)
    assert hull.shape == (4, 2)
    assert {tuple(v) for v in hull} == {(0, 0), (1, 0), (1, 1), (0, 1)}
    assert shoelace(hull) > 0.0                      # counter-clockwise


def test_convex_hull_collinear_degenerates():
    pts = np.array([[0.0, 0.0], [0.5, 0.5], [1.0, 1.0]])
    hull = convex_hull_xy(pts)
    assert hull.shape[0] <= 2


def test_polygon_contains_and_edge_distances():
    square = SupportPolygon(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))
    assert square.contains(np.array([0.5, 0.5]))
    assert not square.contains(np.array([1.2, 0.5]))
    assert not square.contains(np.array([0.99, 0.5]), margin=0.02)
    normals, dists = square.edge_rows(np.array([0.25, 0.4]))
    np.testing.assert_allclose(np.linalg.norm(normals, axis=1), 1.0, atol=1e-12)
    assert dists.min() == pytest.approx(0.25, abs=1e-12)   # nearest edge x=0
    assert np.all(dists >= 0.0)
    _, outside = square.edge_rows(np.array([-0.1, 0.5]))
    assert outside.min() == pytest.approx(-0.1, abs=1e-12)
    np.testing.assert_allclose(square.centroid(), [0.5, 0.5], atol=1e-12)


def test_build_support_polygon_covers_both_feet(nadia):
    q = initial_configuration(nadia, DEFAULT_STANDING_POSTURE)
    support = standing_support(nadia, q)
    assert support.vertices.shape[0] >= 4
    assert support.contains(np.array([0.0, 0.0]))
    fk = forward_kinematics(nadia, q)
    for frame in ("left_foot", "right_foot"):
        assert support.contains(fk[frame].position[:2])
    assert not support.contains(np.array([1.0, 0.0]))


def test_build_support_polygon_unknown_frame(nadia):
    with pytest.raises(KeyError):
        build_support_polygon(nadia, {"left_hand": Pose.identity()})


def test_axis_mask_cached_and_readonly():
    assert axis_mask("x", "y") is axis_mask("x", "y")
    mask = axis_mask("wz")
    assert list(mask) == [False, False, True, False, False, False]
    with pytest.raises(ValueError):
        mask[0] = True


# ---------------------------------------------------------------------------
# task construction


def test_build_tasks_full_active_set():
    cfg = IKConfig()
    predictions = {
        "left_hand": pred([0.4, 0.3, 1.0]),
        "right_hand": pred([0.4, -0.3, 1.0]),
        "chest": pred([0.0, 0.0, 1.3]),
        "pelvis": pred([0.0, 0.0, 0.9]),
        "com": pred([0.02, 0.0, 0.0]),
    }
    tasks = build_tasks(predictions, cfg, np.zeros(2))
    kinds = [(t.kind, t.frame) for t in tasks]
    assert kinds == [("spatial_pose", "left_hand"), ("spatial_pose", "right_hand"),
                     ("spatial_pose", "chest"), ("spatial_pose", "pelvis"),
                     ("com", ""), ("momentum_min", "")]
    by_frame = {t.frame: t for t in tasks if t.kind == "spatial_pose"}
    assert by_frame["left_hand"].weight == cfg.weight_hand
    assert by_frame["left_hand"].selection.all()
    assert list(by_frame["chest"].selection) == [True, True, True, False, False, False]
    # pelvis never constrains horizontal translation
    assert list(by_frame["pelvis"].selection) == [True, True, True, False, False, True]
    assert by_frame["pelvis"].weight == cfg.weight_pelvis
    assert tasks[-1].kind == "momentum_min" and tasks[-1].gain == 0.0


def test_build_tasks_inactive_bodies_leave_com_and_momentum():
    cfg = IKConfig()
    hold = np.array([0.013, -0.004])
    tasks = build_tasks({"left_hand": pred([0.4, 0.3, 1.0], active=False)}, cfg, hold)
    assert [t.kind for t in tasks] == ["com", "momentum_min"]
    com = tasks[0]
    np.testing.assert_array_equal(com.reference.position, [0.013, -0.004, 0.0])
    np.testing.assert_array_equal(com.feedforward.as_vector(), np.zeros(6))
    assert com.weight == cfg.weight_com


def test_build_tasks_balance_hold_ignores_user_com():
    cfg = IKConfig()                                  # com_mode balance_hold
    hold = np.array([0.01, 0.02])
    tasks = build_tasks({"com": pred([0.3, 0.3, 0.0])}, cfg, hold)
    com = [t for t in tasks if t.kind == "com"][0]
    np.testing.assert_array_equal(com.reference.position, [0.01, 0.02, 0.0])


def test_build_tasks_track_user_follows_prediction():
    cfg = IKConfig(com_mode="track_user")
    tasks = build_tasks({"com": pred([0.3, 0.25, 0.0])}, cfg, np.zeros(2))
    com = [t for t in tasks if t.kind == "com"][0]
    np.testing.assert_array_equal(com.reference.position, [0.3, 0.25, 0.0])


# ---------------------------------------------------------------------------
# QP assembly: bounds and constraint rows


def test_velocity_bounds_tighten_at_position_limits(planar):
    cfg = IKConfig()
    state = planar_state(planar, 3.0, 0.0)           # shoulder exactly at q_max
    qp = assemble_qp(planar, state, [], cfg)
    assert qp.ub[6] == 0.0                           # only retreat allowed
    assert qp.lb[6] == -10.0
    assert qp.ub[7] == 10.0 and qp.lb[7] == -10.0    # interior joint at full limit
    state = planar_state(planar, 0.0, -3.0)          # elbow exactly at q_min
    qp = assemble_qp(planar, state, [], cfg)
    assert qp.lb[7] == 0.0
    assert qp.ub[7] == 10.0
    np.testing.assert_array_equal(qp.ub[0:3], [10.0] * 3)
    np.testing.assert_array_equal(qp.ub[3:6], [5.0] * 3)


def test_velocity_bounds_past_limit_force_recovery(planar):
    cfg = IKConfig()
    state = planar_state(planar, 3.02, 0.0)          # past q_max (never via loader)
    qp = assemble_qp(planar, state, [], cfg)
    assert qp.ub[6] == -10.0 and qp.lb[6] == -10.0   # pinned to max restoring speed


def test_velocity_bound_scale(planar):
    cfg = IKConfig(velocity_bound_scale=0.5)
    state = planar_state(planar, 0.0, 0.0)
    qp = assemble_qp(planar, state, [], cfg)
    np.testing.assert_array_equal(qp.ub[6:], [5.0, 5.0])


def test_collision_rhs_zero_exactly_at_min_separation(planar):
    state = planar_state(planar, 0.3, -0.4)
    dist = collision_proximity(planar, state.q)[0].distance
    cfg = IKConfig(collision_activation=dist + 1e-3, collision_min_separation=dist)
    qp = assemble_qp(planar, state, [], cfg)
    assert qp.d.shape[0] == 1
    assert qp.d[0] == 0.0                            # exact: (dist - dist) / dt
    np.testing.assert_array_equal(qp.C[0], state.ws.coll_rows[0])


def test_collision_rows_absent_when_far(planar):
    state = planar_state(planar, 0.3, -0.4)          # pair 0.43 m apart
    qp = assemble_qp(planar, state, [], IKConfig())
    assert qp.C.shape == (0, 8) and qp.d.shape == (0,)


def test_com_rows_slack_when_inside(nadia):
    cfg = IKConfig()
    state = nadia_standing(nadia)
    support = standing_support(nadia, state.q)
    n_edges = support.vertices.shape[0]
    qp = assemble_qp(nadia, state, [], cfg, support)
    assert qp.d.shape[0] >= n_edges
    assert np.all(qp.d[:n_edges] > 0.0)              # standing com is interior


def test_com_rows_floor_at_recovery_speed(nadia):
    cfg = IKConfig()
    state = nadia_standing(nadia)
    far = SupportPolygon(np.array([[10.0, 10.0], [11.0, 10.0], [11.0, 11.0], [10.0, 11.0]]))
    qp = assemble_qp(nadia, state, [], cfg, far)
    # edge lines extend infinitely: the two violated edges floor at the
    # recovery speed, the two facing away stay slack
    assert np.sum(qp.d[:4] == -cfg.recovery_speed) == 2
    assert np.all(qp.d[:4] >= -cfg.recovery_speed)


def test_assemble_rejects_unknown_frame(planar):
    state = planar_state(planar, 0.0, 0.0)
    task = MotionTask("spatial_pose", "nope", 1.0, 50.0, axis_mask(*AXES))
    with pytest.raises(KeyError):
        assemble_qp(planar, state, [task], IKConfig())


def test_gradient_zero_at_nominal_with_zero_error(planar):
    # momentum rows have zero target and q sits at the nominal posture
    state = planar_state(planar, 0.4, -0.2)
    task = MotionTask("momentum_min", "", 0.1, 0.0, axis_mask("wx", "wy", "wz"))
    qp = assemble_qp(planar, state, [task], IKConfig())
    np.testing.assert_array_equal(qp.g, np.zeros(8))


# ---------------------------------------------------------------------------
# solve behavior against closed forms


def test_damped_least_squares_oracle(planar):
    lam, w, gain = 0.37, 2.5, 5.0
    cfg = IKConfig(c_nom=0.0, c_vd=lam)
    state = planar_state(planar, 0.3, -0.4)
    ref = np.array([0.6, 0.3, 0.0])
    task = MotionTask("spatial_pose", "tip", w, gain, axis_mask("x", "y"), Pose(ref))
    qp = assemble_qp(planar, state, [task], cfg)
    assert qp.d.shape[0] == 0

    J = geometric_jacobian(planar, state.q, "tip")[3:5]      # world x/y rows
    tip = forward_kinematics(planar, state.q)["tip"].position
    p = gain * (ref[:2] - tip[:2])
    H = w * (J.T @ J) + lam * np.eye(8)
    expected = np.linalg.solve(H, w * (J.T @ p))
    np.testing.assert_allclose(qp.H, H, atol=1e-12)
    sol = qp_solve(qp)
    assert sol.status == "optimal"
    np.testing.assert_allclose(sol.x, expected, atol=1e-8)


def test_hold_still_solution_is_zero(nadia):
    cfg = IKConfig()
    state = nadia_standing(nadia)
    com = com_position(nadia, state.q)
    support = standing_support(nadia, state.q)
    tasks = build_tasks({}, cfg, com[:2])
    before = state.q.copy()
    result = tick(state, nadia, tasks, cfg, support)
    assert result.stats.status == "optimal"
    assert np.linalg.norm(result.v_d.as_vector()) <= 1e-8
    np.testing.assert_allclose(state.q.joint_positions, before.joint_positions, atol=1e-11)
    np.testing.assert_allclose(state.q.base_pose.position, before.base_pose.position, atol=1e-11)


def test_weight_and_regularizer_scaling_invariance(nadia):
    scale = 7.3
    base = IKConfig()
    scaled = IKConfig(weight_hand=base.weight_hand * scale,
                      weight_chest=base.weight_chest * scale,
                      weight_pelvis=base.weight_pelvis * scale,
                      weight_com=base.weight_com * scale,
                      weight_momentum=base.weight_momentum * scale,
                      weight_foot=base.weight_foot * scale,
                      c_nom=base.c_nom * scale, c_vd=base.c_vd * scale)
    q0 = initial_configuration(nadia, DEFAULT_STANDING_POSTURE)
    fk = forward_kinematics(nadia, q0)
    predictions = {"left_hand": pred(fk["left_hand"].position + [0.05, 0.02, 0.08]),
                   "chest": pred(fk["chest"].position)}
    com = com_position(nadia, q0)
    support = standing_support(nadia, q0)
    sols = []
    for cfg in (base, scaled):
        state = IKState.from_configuration(nadia, q0)
        update_kinematics(nadia, state.q, state.ws)
        tasks = build_tasks(predictions, cfg, com[:2])
        qp = assemble_qp(nadia, state, tasks, cfg, support)
        sols.append(qp_solve(qp).x)
    np.testing.assert_allclose(sols[0], sols[1], atol=1e-9)


def test_tick_sequence_is_deterministic(nadia):
    def run():
        cfg = IKConfig()
        q0 = initial_configuration(nadia, DEFAULT_STANDING_POSTURE)
        fk = forward_kinematics(nadia, q0)
        com = com_position(nadia, q0)
        support = standing_support(nadia, q0)
        predictions = {"left_hand": pred(fk["left_hand"].position + [0.1, 0.0, 0.1]),
                       "right_hand": pred(fk["right_hand"].position + [0.05, -0.05, 0.0])}
        state = IKState.from_configuration(nadia, q0)
        tasks = build_tasks(predictions, cfg, com[:2])
        out = []
        for _ in range(50):
            result = tick(state, nadia, tasks, cfg, support)
            out.append(np.concatenate([result.q.base_pose.position,
                                       result.q.base_pose.orientation,
                                       result.q.joint_positions]))
        return np.stack(out)
    a, b = run(), run()
    assert np.array_equal(a, b)


def test_collision_constraint_holds_through_approach(planar):
    # frozen base: reaching the buried target forces the elbow to fold the
    # forearm capsule onto the base sphere
    cfg = IKConfig(base_angular_bound=0.0, base_linear_bound=0.0)
    state = planar_state(planar, 0.3, -0.4)
    task = MotionTask("spatial_pose", "tip", 10.0, cfg.task_gain,
                      axis_mask("x", "y"), Pose(np.array([0.1, 0.05, 0.0])))
    min_seen = np.inf
    for _ in range(1000):
        tick(state, planar, [task], cfg)
        dist = collision_proximity(planar, state.q)[0].distance
        min_seen = min(min_seen, dist)
    assert state.fault_count == 0
    assert min_seen >= cfg.collision_min_separation - 1e-6
    assert min_seen < cfg.collision_activation        # the constraint engaged


def test_joint_limits_hold_under_runaway_nominal(planar):
    # nominal posture outside the limits drags the shoulder onto its stops
    # (elbow held straight: folding it collides with the base instead); the
    # limit-aware boxes must park the joint there without overshoot
    state = planar_state(planar, 0.0, 0.0)
    for q_nom, ticks, stop in ((np.array([4.0, 0.0]), 400, planar.q_max[0]),
                               (np.array([-4.0, 0.0]), 700, planar.q_min[0])):
        cfg = IKConfig(base_angular_bound=0.0, base_linear_bound=0.0,
                       c_nom=10.0, nominal_gain=50.0, q_nom=q_nom)
        for _ in range(ticks):
            tick(state, planar, [], cfg)
            assert np.all(state.q.joint_positions <= planar.q_max + 1e-9)
            assert np.all(state.q.joint_positions >= planar.q_min - 1e-9)
        assert abs(state.q.joint_positions[0] - stop) < 1e-9
        assert abs(state.q.joint_positions[1]) < 0.05


def test_com_stays_inside_polygon_under_arm_motion(nadia):
    cfg = IKConfig()
    rng = np.random.default_rng(7)
    q0 = initial_configuration(nadia, DEFAULT_STANDING_POSTURE)
    fk = forward_kinematics(nadia, q0)
    com0 = com_position(nadia, q0)
    support = standing_support(nadia, q0)
    state = IKState.from_configuration(nadia, q0)
    feet = [MotionTask("spatial_pose", f, cfg.weight_foot, cfg.task_gain,
                       axis_mask(*AXES), fk[f]) for f in ("left_foot", "right_foot")]
    for block in range(4):
        predictions = {
            "left_hand": pred(fk["left_hand"].position + rng.uniform(-0.15, 0.15, 3)),
            "right_hand": pred(fk["right_hand"].position + rng.uniform(-0.15, 0.15, 3)),
        }
        tasks = build_tasks(predictions, cfg, com0[:2]) + feet
        for _ in range(50):
            tick(state, nadia, tasks, cfg, support)
            assert support.contains(com_position(nadia, state.q))


def test_tick_stats_report_constraint_rows(nadia, planar):
    cfg = IKConfig()
    state = nadia_standing(nadia)
    support = standing_support(nadia, state.q)
    result = tick(state, nadia, [], cfg, support)
    assert result.stats.com_rows == support.vertices.shape[0]
    assert result.stats.kkt_residual <= 1e-6

    pstate = planar_state(planar, 0.5, -2.8)          # folded, pair well inside 5 cm
    dist = collision_proximity(planar, pstate.q)[0].distance
    assert dist < cfg.collision_activation
    result = tick(pstate, planar, [], cfg)
    assert result.stats.active_collision_rows == 1
    assert result.stats.com_rows == 0
