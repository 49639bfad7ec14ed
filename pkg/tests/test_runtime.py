import hashlib
import json
import math

import numpy as np
import pytest

from kst.config import SessionConfig, session_config_from_dict
from kst.estimation import MotionInput, MotionTarget
from kst.geometry import Pose, quat_from_yaw_pitch_roll, quat_yaw
from kst.model import forward_kinematics
from kst.protocol import (
    footstep_command_payload,
    make_envelope,
    motion_input_payload,
    tracker_frame_payload,
)
from kst.retarget import FootstepCommand, TrackerBundle
from kst.runtime import (
    DEFAULT_STANDING_POSTURE,
    FootstepExecutor,
    InputMailbox,
    Metrics,
    Recorder,
    SimClock,
    StreamingSession,
    _mid_feet_frame,
    initial_configuration,
    read_recording,
    run_replay,
)

DT = 1e-3


def sim_session(**overrides) -> StreamingSession:
    cfg = session_config_from_dict({"clock": "simulated", **overrides})
    return StreamingSession(cfg, clock=SimClock())


def motion_envelope(seq, t, targets, com=None):
    minput = MotionInput(t, {b: MotionTarget(p) for b, p in targets.items()},
                         com_ground=com)
    return make_envelope("motion_input", seq, t, motion_input_payload(minput))


def tracker_bundle(t, **moves):
    base = {
        "headset": np.array([0.0, 0.0, 1.70]),
        "controller_left": np.array([0.35, 0.25, 1.05]),
        "controller_right": np.array([0.35, -0.25, 1.05]),
        "chest": np.array([0.0, 0.0, 1.40]),
        "waist": np.array([0.0, 0.0, 1.00]),
        "ankle_left": np.array([0.0, 0.10, 0.10]),
        "ankle_right": np.array([0.0, -0.10, 0.10]),
    }
    for name, delta in moves.items():
        base[name] = base[name] + np.asarray(delta, float)
    return TrackerBundle(t, **{nm: Pose(p) for nm, p in base.items()})


# ---------------------------------------------------------------------------
# clocks and mailbox


def test_sim_clock_semantics():
    clock = SimClock()
    assert clock.now() == 0.0
    clock.advance(0.25)
    assert clock.now() == 0.25
    clock.sleep_until(0.5)
    assert clock.now() == 0.5
    clock.sleep_until(0.1)                             # never goes backwards
    assert clock.now() == 0.5


def test_mailbox_keeps_latest_and_counts_overwrites():
    box = InputMailbox()
    assert box.take() is None
    box.put("motion", "a", 0.1)
    box.put("motion", "b", 0.2)
    assert box.overwrites == 1
    kind, value, t = box.take()
    assert (kind, value, t) == ("motion", "b", 0.2)
    assert box.take() is None                          # drained


# ---------------------------------------------------------------------------
# initial configuration and stance frames


def test_initial_configuration_feet_on_ground(nadia):
    q = initial_configuration(nadia, DEFAULT_STANDING_POSTURE)
    fk = forward_kinematics(nadia, q)
    zs = [fk["left_foot"].position[2], fk["right_foot"].position[2]]
    assert min(zs) == pytest.approx(0.0, abs=1e-12)
    assert max(zs) < 1e-9                              # standing square
    idx = nadia.joint_index("l_knee_pitch")
    assert q.joint_positions[idx] == 0.8


def test_initial_configuration_clips_overrides(nadia):
    q = initial_configuration(nadia, {"l_knee_pitch": 99.0})
    idx = nadia.joint_index("l_knee_pitch")
    assert q.joint_positions[idx] == nadia.q_max[idx]


def test_initial_configuration_unknown_joint(nadia):
    with pytest.raises((KeyError, ValueError)):
        initial_configuration(nadia, {"l_knee_bend": 0.1})


def test_mid_feet_frame_midpoint_and_yaw():
    left = Pose(np.array([0.1, 0.2, 0.02]), quat_from_yaw_pitch_roll(0.3, 0, 0))
    right = Pose(np.array([0.3, -0.2, 0.0]), quat_from_yaw_pitch_roll(0.1, 0, 0))
    mid = _mid_feet_frame(left, right)
    np.testing.assert_allclose(mid.position, [0.2, 0.0, 0.0], atol=1e-12)
    assert quat_yaw(mid.orientation) == pytest.approx(0.2, abs=1e-12)


def test_mid_feet_frame_yaw_wraps():
    left = Pose(np.zeros(3), quat_from_yaw_pitch_roll(math.pi - 0.1, 0, 0))
    right = Pose(np.zeros(3), quat_from_yaw_pitch_roll(-math.pi + 0.1, 0, 0))
    mid = _mid_feet_frame(left, right)
    # circular mean lands at pi, not at zero
    assert abs(abs(quat_yaw(mid.orientation)) - math.pi) < 1e-9


# ---------------------------------------------------------------------------
# footstep executor


def make_executor(duration=0.6, apex=0.05):
    return FootstepExecutor(Pose(np.array([0.0, 0.12, 0.0])),
                            Pose(np.array([0.0, -0.12, 0.0])), duration, apex)


def test_swing_interpolation_oracle():
    ex = make_executor()
    goal = Pose(np.array([0.3, 0.12, 0.0]), quat_from_yaw_pitch_roll(0.4, 0, 0))
    assert ex.submit(FootstepCommand("left", goal, 0.0))
    assert ex.update(0.0) is None                      # activates, nothing done
    for s in (0.25, 0.5, 0.75):
        ref = ex.foot_reference("left", s * 0.6)
        sigma = s * s * (3 - 2 * s)
        assert ref.position[0] == pytest.approx(0.3 * sigma, abs=1e-12)
        assert ref.position[2] == pytest.approx(0.05 * 4 * s * (1 - s), abs=1e-12)
        assert quat_yaw(ref.orientation) == pytest.approx(0.4 * sigma, abs=1e-12)
    mid = ex.foot_reference("left", 0.3)
    assert mid.position[2] == pytest.approx(0.05, abs=1e-12)   # apex at s = 1/2
    # the stance side never moves during the swing
    np.testing.assert_array_equal(ex.foot_reference("right", 0.3).position,
                                  [0.0, -0.12, 0.0])
    assert ex.update(0.61) == "left"
    assert ex.steps_completed == 1
    np.testing.assert_array_equal(ex.stance["left"].position, goal.position)
    np.testing.assert_array_equal(ex.foot_reference("left", 0.7).position, goal.position)


def test_swing_queue_cap_and_sequencing():
    ex = make_executor(duration=0.1)
    goal = Pose(np.array([0.1, 0.12, 0.0]))
    for _ in range(FootstepExecutor.MAX_QUEUE):
        assert ex.submit(FootstepCommand("left", goal, 0.0))
    assert not ex.submit(FootstepCommand("left", goal, 0.0))   # full
    assert ex.update(0.0) is None                      # pops one into active
    assert ex.submit(FootstepCommand("right", goal, 0.0))
    # one swing at a time: completing returns exactly one side per update
    completions = []
    for k in range(1, 60):
        done = ex.update(k * 0.02)
        if done:
            completions.append(done)
    assert completions == ["left", "left", "left", "left", "right"]


# ---------------------------------------------------------------------------
# streaming session: ingestion


def test_hello_and_model_summary_replies():
    session = sim_session()
    replies = session.ingest_envelope(make_envelope("hello", 1, 0.0,
                                                    {"mode": "motion_input"}), 0.0)
    assert [r["type"] for r in replies] == ["hello"]
    assert replies[0]["payload"] == {"mode": "motion_input", "model": "nadia_like",
                                     "tick_rate": 1000.0}
    replies = session.ingest_envelope(make_envelope("model_summary", 2, 0.0, {}), 0.0)
    assert replies[0]["type"] == "model_summary"
    assert replies[0]["payload"]["name"] == "nadia_like"
    seqs = [r["seq"] for r in replies]
    assert all(isinstance(s, int) for s in seqs)


def test_wrong_mode_messages_are_errors():
    session = sim_session()                            # motion_input mode
    bundle = tracker_bundle(0.0)
    replies = session.ingest_envelope(
        make_envelope("tracker_frame", 1, 0.0, tracker_frame_payload(bundle)), 0.0)
    assert replies[0]["type"] == "error"
    replies = session.ingest_envelope(make_envelope("hello", 2, 0.0,
                                                    {"mode": "tracker_frame"}), 0.0)
    assert replies[0]["type"] == "error"
    assert session.metrics.protocol_errors == 2


def test_malformed_text_gets_error_reply():
    session = sim_session()
    replies = session.ingest_text("{nope", 0.0)
    assert replies[0]["type"] == "error"
    assert "JSON" in replies[0]["payload"]["message"]
    replies = session.ingest_envelope(make_envelope("mystery", 1, 0.0, {}), 0.0)
    assert replies[0]["type"] == "error"
    assert session.metrics.protocol_errors == 2


def test_footstep_command_ack_and_queue_limit():
    session = sim_session()
    cmd = FootstepCommand("left", Pose(np.array([0.2, 0.12, 0.0])), 0.0)
    env = make_envelope("footstep_command", 1, 0.0, footstep_command_payload(cmd))
    replies = session.ingest_envelope(env, 0.0)
    assert replies[0]["type"] == "footstep_command_ack"
    assert replies[0]["payload"]["accepted"] is True
    assert replies[0]["payload"]["side"] == "left"
    for _ in range(3):
        session.ingest_envelope(env, 0.0)
    replies = session.ingest_envelope(env, 0.0)        # fifth: queue is full
    assert replies[0]["payload"]["accepted"] is False


# ---------------------------------------------------------------------------
# streaming session: tick pipeline


def test_session_holds_still_without_input():
    session = sim_session()
    q0 = session.initial_q.joint_positions.copy()
    for _ in range(100):
        frame = session.tick()
    assert session.metrics.frames_emitted == 100
    assert session.metrics.qp_status == {"optimal": 100}
    np.testing.assert_allclose(frame.q_fb, q0, atol=1e-7)
    np.testing.assert_allclose(frame.qd_fb, 0.0, atol=1e-5)


def test_session_tracks_hand_target():
    session = sim_session()
    fk = forward_kinematics(session.model, session.initial_q)
    hand0 = fk["left_hand"]
    target = Pose(hand0.position + np.array([0.05, 0.0, 0.03]), hand0.orientation)
    session.ingest_envelope(motion_envelope(1, 0.0, {"left_hand": target}), 0.0)
    err0 = None
    for k in range(500):
        session.tick()
        if k == 0:
            err0 = np.linalg.norm(session._frame_pose("left_hand").position - target.position)
    assert session.metrics.inputs_accepted == 1
    err = np.linalg.norm(session._frame_pose("left_hand").position - target.position)
    assert err < 0.4 * err0
    assert len(session.metrics.latency_ms) == 1
    assert 0.0 < session.metrics.latency_ms[0] <= 2 * DT * 1e3
    assert len(session.metrics.input_age_ms) == 1


def test_rejected_input_is_counted_not_applied():
    session = sim_session()
    fk = forward_kinematics(session.model, session.initial_q)
    hand0 = fk["left_hand"]
    ok = Pose(hand0.position + np.array([0.02, 0.0, 0.0]), hand0.orientation)
    session.ingest_envelope(motion_envelope(1, 0.0, {"left_hand": ok}), 0.0)
    session.tick()
    jump = Pose(hand0.position + np.array([0.52, 0.0, 0.0]), hand0.orientation)
    session.ingest_envelope(motion_envelope(2, 1 / 60, {"left_hand": jump}), 1 / 60)
    session.tick()
    assert session.metrics.inputs_accepted == 1
    assert session.metrics.rejections["left_hand.rate"] == 1
    # estimator still aims at the accepted pose
    np.testing.assert_allclose(session.estimators["left_hand"].last_input.position,
                               ok.position, atol=1e-12)


def test_input_gap_decays_to_steady_stream():
    session = sim_session(estimator={"decay_duration": 0.1},
                          postprocess={"blend_duration": 0.2})
    fk = forward_kinematics(session.model, session.initial_q)
    hand0 = fk["left_hand"]
    target = Pose(hand0.position + np.array([0.04, 0.0, 0.02]), hand0.orientation)
    session.ingest_envelope(motion_envelope(1, 0.0, {"left_hand": target}), 0.0)
    frames = [session.tick() for _ in range(1500)]     # decay plus settle time
    assert session.estimators["left_hand"].alpha_timer >= 0.1
    deltas = np.array([np.abs(b.q_fb - a.q_fb).max()
                       for a, b in zip(frames, frames[1:])])
    # continuity during the whole run: no emitted teleports
    assert deltas.max() < 0.02
    # after the stream stops the motion winds down toward the rest posture
    assert deltas[-100:].max() < 3e-5
    assert deltas[-100:].max() < 0.3 * deltas[200:300].max()


def test_session_respects_config_overrides():
    session = sim_session(ik={"weight_hand": 12.5}, tick_rate=500.0)
    assert session.config.ik.weight_hand == 12.5
    assert session.dt == pytest.approx(0.002)
    assert session.config.ik.dt_tick == pytest.approx(0.002)


# ---------------------------------------------------------------------------
# recording and replay


def write_demo_recording(path, seconds=0.5):
    rec = Recorder(path, mode="motion_input", model_name="nadia_like", tick_rate=1000.0)
    cfg = SessionConfig()
    session = StreamingSession(cfg, clock=SimClock())
    fk = forward_kinematics(session.model, session.initial_q)
    hand0 = fk["left_hand"]
    n = int(seconds * 60)
    for k in range(n):
        t = k / 60.0
        pose = Pose(hand0.position + np.array([0.03 * math.sin(2 * math.pi * 0.5 * t),
                                               0.0, 0.0]), hand0.orientation)
        rec.append(t, motion_envelope(k, t, {"left_hand": pose}))
    rec.close()
    return n


def test_recorder_roundtrip(tmp_path):
    path = tmp_path / "session.rec"
    n = write_demo_recording(path)
    header, events = read_recording(path)
    assert header == {"recording_version": 1, "mode": "motion_input",
                      "model": "nadia_like", "tick_rate": 1000.0}
    assert len(events) == n
    assert events[0][0] == 0.0
    assert events[3][0] == pytest.approx(3 / 60, abs=1e-9)
    assert all(env["type"] == "motion_input" for _, env in events)


def test_recording_header_validation(tmp_path):
    bad_version = tmp_path / "v99.rec"
    bad_version.write_text(json.dumps({"recording_version": 99, "mode": "motion_input",
                                       "model": "nadia_like", "tick_rate": 1000.0}) + "\n")
    with pytest.raises(ValueError, match="version"):
        read_recording(bad_version)
    empty = tmp_path / "empty.rec"
    empty.write_text("")
    with pytest.raises(ValueError, match="empty"):
        read_recording(empty)
    bad_line = tmp_path / "truncated.rec"
    bad_line.write_text(json.dumps({"recording_version": 1, "mode": "motion_input",
                                    "model": "nadia_like", "tick_rate": 1000.0})
                        + "\nnot-a-line\n")
    with pytest.raises(ValueError, match=":2"):
        read_recording(bad_line)


def test_session_records_inputs(tmp_path):
    path = tmp_path / "live.rec"
    session = sim_session(record_path=str(path))
    fk = forward_kinematics(session.model, session.initial_q)
    pose = Pose(fk["left_hand"].position, fk["left_hand"].orientation)
    session.ingest_envelope(make_envelope("hello", 1, 0.0, {"mode": "motion_input"}), 0.0)
    session.ingest_envelope(motion_envelope(2, 0.0, {"left_hand": pose}), 0.0)
    cmd = FootstepCommand("left", Pose(np.array([0.2, 0.12, 0.0])), 0.0)
    session.ingest_envelope(
        make_envelope("footstep_command", 3, 0.0, footstep_command_payload(cmd)), 0.0)
    session.close()
    header, events = read_recording(path)
    # hello is a control message, not an input: it is not recorded
    assert [env["type"] for _, env in events] == ["motion_input", "footstep_command"]


def test_replay_is_bitwise_deterministic(tmp_path):
    path = tmp_path / "demo.rec"
    write_demo_recording(path, seconds=0.4)

    def run():
        sink = hashlib.sha256()
        session = run_replay(SessionConfig(clock="simulated"), path, tail_s=0.2,
                             frame_sink=lambda f: sink.update(f.q_fb.tobytes()
                                                              + f.base_pose.position.tobytes()
                                                              + f.base_pose.orientation.tobytes()))
        return sink.hexdigest(), session.metrics.frames_emitted, session.now

    (h1, n1, t1), (h2, n2, t2) = run(), run()
    assert h1 == h2
    assert n1 == n2 and t1 == t2
    assert n1 >= int((0.4 + 0.2) / DT) - 1             # ran through the tail


def test_replay_rejects_mismatched_recording(tmp_path):
    path = tmp_path / "demo.rec"
    write_demo_recording(path, seconds=0.1)
    with pytest.raises(ValueError, match="mode"):
        run_replay(SessionConfig(mode="tracker_frame"), path)
    rec = Recorder(tmp_path / "planar.rec", mode="motion_input",
                   model_name="planar_2r", tick_rate=1000.0)
    rec.close()
    with pytest.raises(ValueError, match="model"):
        run_replay(SessionConfig(), tmp_path / "planar.rec")
    with pytest.raises(ValueError, match="speed"):
        run_replay(SessionConfig(), path, speed=0.0)


# ---------------------------------------------------------------------------
# tracker mode end to end


def test_tracker_mode_calibrates_and_tracks():
    session = sim_session(mode="tracker_frame")
    env = make_envelope("tracker_frame", 1, 0.0, tracker_frame_payload(tracker_bundle(0.0)))
    session.ingest_envelope(env, 0.0)
    session.tick()
    assert session.calibration is not None
    assert session.footstep_state is not None
    pelvis0 = session._frame_pose("pelvis").position[2]

    # crouch: waist drops 6 cm, the pelvis height task follows
    for k in range(1, 40):
        t = k / 60.0
        bundle = tracker_bundle(t, waist=[0.0, 0.0, -0.06], chest=[0.0, 0.0, -0.06],
                                controller_left=[0.0, 0.0, -0.06],
                                controller_right=[0.0, 0.0, -0.06])
        session.ingest_envelope(
            make_envelope("tracker_frame", k + 1, t, tracker_frame_payload(bundle)), t)
        for _ in range(16):
            session.tick()
    pelvis1 = session._frame_pose("pelvis").position[2]
    assert pelvis1 < pelvis0 - 0.02


def test_tracker_mode_executes_one_footstep():
    session = sim_session(mode="tracker_frame", swing_duration=0.1)
    session.ingest_envelope(
        make_envelope("tracker_frame", 1, 0.0,
                      tracker_frame_payload(tracker_bundle(0.0))), 0.0)
    session.tick()
    stance0 = session.executor.stance["left"].position.copy()

    # one decisive ankle motion: forward past the step threshold, lifted past
    # the lift threshold
    step = tracker_bundle(1 / 60, ankle_left=[0.20, 0.0, 0.10])
    session.ingest_envelope(
        make_envelope("tracker_frame", 2, 1 / 60, tracker_frame_payload(step)), 1 / 60)
    for _ in range(200):                               # swing takes 100 ticks
        session.tick()
    assert session.executor.steps_completed == 1
    stance1 = session.executor.stance["left"].position
    assert stance1[0] == pytest.approx(stance0[0] + session.config.footsteps.stride,
                                       abs=1e-9)
    # latched: the held ankle pose must not retrigger
    for k in range(2, 30):
        t = k / 60.0
        session.ingest_envelope(
            make_envelope("tracker_frame", k + 1, t, tracker_frame_payload(step)), t)
        for _ in range(4):
            session.tick()
    assert session.executor.steps_completed == 1


# ---------------------------------------------------------------------------
# metrics


def test_metrics_snapshot_and_csv(tmp_path):
    session = sim_session()
    fk = forward_kinematics(session.model, session.initial_q)
    hand0 = fk["left_hand"]
    for k in range(6):
        t = k / 60.0
        pose = Pose(hand0.position + np.array([0.01 * k, 0.0, 0.0]), hand0.orientation)
        session.ingest_envelope(motion_envelope(k, t, {"left_hand": pose}), t)
        for _ in range(16):
            session.tick()
    snap = session.metrics.snapshot()
    assert snap["frames_emitted"] == 96
    assert snap["inputs_accepted"] == 6
    assert set(snap["tick_us"]) == {"median", "p99", "max"}
    assert snap["qp"]["status"]["optimal"] == 96
    assert snap["tracking_rms"]["left_hand"]["pos_m"] > 0.0

    session.metrics.write_csv(tmp_path)
    tracking = (tmp_path / "tracking_left_hand.csv").read_text().splitlines()
    assert tracking[0].startswith("tick,body,input_x")
    assert tracking[0].endswith("error_pos_m,error_ang_rad")
    assert len(tracking) == 1 + len(session.metrics.tracking["left_hand"])
    summary = (tmp_path / "summary.csv").read_text().splitlines()
    assert summary[0] == "metric,value"
    assert any(line.startswith("tick_us.median,") for line in summary)


def test_tracking_rms_windows():
    m = Metrics()
    m.record_tracking(1, "left_hand", Pose(np.array([1.0, 0.0, 0.0])), Pose(np.zeros(3)))
    m.record_tracking(10, "left_hand", Pose(np.array([0.0, 0.0, 0.0])), Pose(np.zeros(3)))
    full_pos, full_ang = m.tracking_rms("left_hand")
    assert full_pos == pytest.approx(math.sqrt(0.5))
    assert full_ang == 0.0
    late_pos, _ = m.tracking_rms("left_hand", after_tick=5)
    assert late_pos == 0.0
    assert m.tracking_rms("missing") == (0.0, 0.0)


def test_tracking_error_uses_controlled_axes_only():
    m = Metrics()
    # chest has no linear task: position offset must contribute zero error
    m.record_tracking(1, "chest", Pose(np.array([5.0, 5.0, 5.0])), Pose(np.zeros(3)))
    assert m.tracking_rms("chest") == (0.0, 0.0)
    # pelvis error counts height only
    m.record_tracking(1, "pelvis", Pose(np.array([3.0, 4.0, 0.1])), Pose(np.zeros(3)))
    pos, _ = m.tracking_rms("pelvis")
    assert pos == pytest.approx(0.1)
