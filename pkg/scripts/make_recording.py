"""Synthesize the bundled 10 s demo recording (motion_input mode).

Left/right hands sweep slow circles around their rest poses, the pelvis bobs,
the chest sways in yaw, and two footstep commands land mid-session. Arrival
timestamps are the ideal 60 Hz grid, so sim-clock replay is deterministic.
"""

import math
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from kst.config import session_config_from_dict
from kst.estimation import MotionInput, MotionTarget
from kst.geometry import Pose, quat_from_yaw_pitch_roll
from kst.protocol import (encode_envelope, footstep_command_payload,
                          make_envelope, motion_input_payload)
from kst.retarget import FootstepCommand
from kst.runtime import Recorder, SimClock, StreamingSession

OUT = Path(__file__).resolve().parent.parent / "src" / "kst" / "data" / "demo_10s.rec"
DURATION_S = 10.0
INPUT_RATE = 60.0


def main():
    config = session_config_from_dict({"mode": "motion_input"})
    session = StreamingSession(config, clock=SimClock())
    left_hand0 = session._frame_pose("left_hand")
    right_hand0 = session._frame_pose("right_hand")
    left0, left_ori = left_hand0.position.copy(), left_hand0.orientation.copy()
    right0, right_ori = right_hand0.position.copy(), right_hand0.orientation.copy()
    pelvis0 = session._frame_pose("pelvis").position.copy()
    chest0 = session._frame_pose("chest").position.copy()
    left_foot = session._frame_pose("left_foot")
    right_foot = session._frame_pose("right_foot")

    recorder = Recorder(OUT, mode="motion_input", model_name=config.model,
                        tick_rate=config.tick_rate)
    seq = 0

    def emit(t, msg_type, payload):
        nonlocal seq
        seq += 1
        recorder.append(t, make_envelope(msg_type, seq, t, payload))

    steps = [
        (4.0, "left", Pose(left_foot.position + [0.15, 0.0, 0.0],
                           left_foot.orientation.copy())),
        (7.0, "right", Pose(right_foot.position + [0.15, 0.0, 0.0],
                            right_foot.orientation.copy())),
    ]
    def smoothstep(u):
        u = min(max(u, 0.0), 1.0)
        return u * u * (3.0 - 2.0 * u)

    def advance(t):
        # upper-body targets ride the mid-feet frame: each 0.15 m step moves
        # mid-feet forward 0.075 m, ramped after touchdown so the lean never
        # fights the single-support balance hold during the swing itself
        f = 0.0
        for t_cmd, _, _ in steps:
            f += 0.075 * smoothstep((t - (t_cmd + 0.6)) / 0.6)
        return np.array([f, 0.0, 0.0])

    step_idx = 0
    n = int(DURATION_S * INPUT_RATE)
    for k in range(n):
        t = k / INPUT_RATE
        while step_idx < len(steps) and steps[step_idx][0] <= t:
            _, side, pose = steps[step_idx]
            emit(t, "footstep_command",
                 footstep_command_payload(FootstepCommand(side, pose, t)))
            step_idx += 1
        circle = np.array([0.05 * math.sin(2 * math.pi * 0.3 * t),
                           0.04 * (1.0 - math.cos(2 * math.pi * 0.3 * t)),
                           0.04 * math.sin(2 * math.pi * 0.2 * t)])
        bob = np.array([0.0, 0.0, 0.025 * math.sin(2 * math.pi * 0.15 * t)])
        sway = quat_from_yaw_pitch_roll(0.15 * math.sin(2 * math.pi * 0.1 * t), 0.0, 0.0)
        fwd = advance(t)
        minput = MotionInput(timestamp=t, targets={
            "left_hand": MotionTarget(Pose(left0 + fwd + circle, left_ori.copy())),
            "right_hand": MotionTarget(Pose(right0 + fwd + circle * [1, -1, 1],
                                            right_ori.copy())),
            "pelvis": MotionTarget(Pose(pelvis0 + fwd + bob, np.array([1.0, 0, 0, 0]))),
            "chest": MotionTarget(Pose(chest0 + fwd, sway)),
        })
        emit(t, "motion_input", motion_input_payload(minput))
    recorder.close()
    print(f"wrote {OUT} ({seq} envelopes, {DURATION_S:.0f} s at {INPUT_RATE:.0f} Hz)")


if __name__ == "__main__":
    main()
