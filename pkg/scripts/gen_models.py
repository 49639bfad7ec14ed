"""Regenerate the bundled model files (planar_2r.model, nadia_like.model).

The humanoid is hand-designed but too repetitive to maintain as raw JSON;
edit the tables here and rerun:  python3 scripts/gen_models.py
"""

import json
from pathlib import Path

DATA = Path(__file__).resolve().parent.parent / "src" / "kst" / "data"


def rod_inertia(m, length, radius=0.05):
    # solid rod along its long axis, principal values only
    it = m * (length ** 2) / 12.0 + 0.25 * m * radius ** 2
    ia = 0.5 * m * radius ** 2
    return [round(it, 6), round(it, 6), round(ia, 6)]


def planar_2r():
    return {
        "name": "planar_2r",
        "links": [
            {"name": "base", "mass": 1.0, "com": [0, 0, 0], "inertia": [0.01, 0.01, 0.01]},
            {"name": "link1", "mass": 1.0, "com": [0.25, 0, 0], "inertia": rod_inertia(1.0, 0.5)},
            {"name": "link2", "mass": 1.0, "com": [0.25, 0, 0], "inertia": rod_inertia(1.0, 0.5)},
        ],
        "joints": [
            {"name": "root", "type": "floating-base", "child": "base"},
            {
                "name": "shoulder", "type": "revolute", "parent": "base", "child": "link1",
                "axis": [0, 0, 1], "origin": {"xyz": [0, 0, 0]},
                "position_limits": [-3.0, 3.0], "velocity_limit": 10.0,
            },
            {
                "name": "elbow", "type": "revolute", "parent": "link1", "child": "link2",
                "axis": [0, 0, 1], "origin": {"xyz": [0.5, 0, 0]},
                "position_limits": [-3.0, 3.0], "velocity_limit": 10.0,
            },
        ],
        "frames": {
            "tip": {"link": "link2", "xyz": [0.5, 0, 0]},
            "mid": {"link": "link1", "xyz": [0.5, 0, 0]},
        },
        "collision_shapes": [
            {"name": "link1_c", "link": "link1", "primitive": "capsule", "start": [0.05, 0, 0], "end": [0.45, 0, 0], "radius": 0.04},
            {"name": "link2_c", "link": "link2", "primitive": "capsule", "start": [0.05, 0, 0], "end": [0.45, 0, 0], "radius": 0.04},
            {"name": "base_c", "link": "base", "primitive": "sphere", "center": [0, 0, 0], "radius": 0.08},
        ],
        "collision_pairs": [["link2_c", "base_c"]],
        "foot_polygons": {},
    }


def nadia_like():
    links = [{"name": "pelvis", "mass": 13.0, "com": [0, 0, 0.02], "inertia": [0.12, 0.09, 0.10]}]
    joints = [{"name": "root", "type": "floating-base", "child": "pelvis"}]

    def add_joint(name, parent, child, axis, xyz, limits, vmax, mass, com, inertia):
        links.append({"name": child, "mass": mass, "com": com, "inertia": inertia})
        joints.append({
            "name": name, "type": "revolute", "parent": parent, "child": child,
            "axis": axis, "origin": {"xyz": xyz},
            "position_limits": limits, "velocity_limit": vmax,
        })

    tiny = [0.001, 0.001, 0.001]
    for s, sign in (("l", 1.0), ("r", -1.0)):
        hip = [0.0, round(sign * 0.12, 3), -0.05]
        add_joint(f"{s}_hip_yaw", "pelvis", f"{s}_hip_1", [0, 0, 1], hip, [-0.8, 0.8], 8.0, 0.6, [0, 0, 0], tiny)
        add_joint(f"{s}_hip_roll", f"{s}_hip_1", f"{s}_hip_2", [1, 0, 0], [0, 0, 0],
                  [-0.5, 0.5] if sign > 0 else [-0.5, 0.5], 8.0, 0.6, [0, 0, 0], tiny)
        add_joint(f"{s}_hip_pitch", f"{s}_hip_2", f"{s}_thigh", [0, 1, 0], [0, 0, 0],
                  [-2.0, 0.6], 9.0, 5.5, [0, 0, -0.2], rod_inertia(5.5, 0.4, 0.07))
        add_joint(f"{s}_knee_pitch", f"{s}_thigh", f"{s}_shin", [0, 1, 0], [0, 0, -0.40],
                  [0.0, 2.3], 11.0, 3.4, [0, 0, -0.18], rod_inertia(3.4, 0.4, 0.05))
        add_joint(f"{s}_ankle_pitch", f"{s}_shin", f"{s}_ankle_1", [0, 1, 0], [0, 0, -0.40],
                  [-1.0, 0.8], 10.0, 0.3, [0, 0, 0], tiny)
        add_joint(f"{s}_ankle_roll", f"{s}_ankle_1", f"{s}_foot", [1, 0, 0], [0, 0, 0],
                  [-0.5, 0.5], 10.0, 1.7, [0.02, 0, -0.06], [0.004, 0.007, 0.008])

    # two-joint spine; the head is rigid on the chest (its 4.2 kg at z 0.47 is
    # folded into the chest link mass/inertia) so both wrists get a roll joint
    # while the total stays at 28 actuated joints
    add_joint("spine_yaw", "pelvis", "spine_1", [0, 0, 1], [0, 0, 0.10], [-0.9, 0.9], 6.0, 0.8, [0, 0, 0], tiny)
    add_joint("spine_pitch", "spine_1", "chest", [0, 1, 0], [0, 0, 0], [-0.3, 0.7], 6.0, 20.2, [0, 0, 0.224],
              [0.69, 0.64, 0.24])

    for s, sign in (("l", 1.0), ("r", -1.0)):
        sh = [0.0, round(sign * 0.25, 3), 0.32]
        roll_lim = [-0.3, 2.6] if sign > 0 else [-2.6, 0.3]
        yaw_lim = [-1.6, 1.6]
        add_joint(f"{s}_shoulder_pitch", "chest", f"{s}_shoulder_1", [0, 1, 0], sh, [-2.8, 2.8], 9.0, 0.4, [0, 0, 0], tiny)
        add_joint(f"{s}_shoulder_roll", f"{s}_shoulder_1", f"{s}_shoulder_2", [1, 0, 0], [0, 0, 0], roll_lim, 9.0, 0.4, [0, 0, 0], tiny)
        add_joint(f"{s}_shoulder_yaw", f"{s}_shoulder_2", f"{s}_upper_arm", [0, 0, 1], [0, 0, 0], yaw_lim, 9.0, 2.1,
                  [0, 0, -0.13], rod_inertia(2.1, 0.28, 0.045))
        add_joint(f"{s}_elbow_pitch", f"{s}_upper_arm", f"{s}_forearm", [0, 1, 0], [0, 0, -0.28], [-2.4, 0.05], 9.0, 1.4,
                  [0, 0, -0.11], rod_inertia(1.4, 0.25, 0.04))
        add_joint(f"{s}_forearm_yaw", f"{s}_forearm", f"{s}_wrist_1", [0, 0, 1], [0, 0, -0.25], [-1.6, 1.6], 9.0, 0.2,
                  [0, 0, 0], tiny)
        add_joint(f"{s}_wrist_pitch", f"{s}_wrist_1", f"{s}_wrist_2", [0, 1, 0], [0, 0, 0], [-1.0, 1.0], 9.0, 0.2,
                  [0, 0, 0], tiny)
        add_joint(f"{s}_wrist_roll", f"{s}_wrist_2", f"{s}_hand", [1, 0, 0], [0, 0, 0], [-1.0, 1.0], 9.0, 0.6,
                  [0, 0, -0.05], [0.001, 0.001, 0.0006])

    frames = {
        "pelvis": {"link": "pelvis", "xyz": [0, 0, 0]},
        "chest": {"link": "chest", "xyz": [0, 0, 0.20]},
        "head": {"link": "chest", "xyz": [0, 0, 0.48]},
        "left_shoulder": {"link": "chest", "xyz": [0, 0.25, 0.32]},
        "right_shoulder": {"link": "chest", "xyz": [0, -0.25, 0.32]},
        "left_hand": {"link": "l_hand", "xyz": [0, 0, -0.06]},
        "right_hand": {"link": "r_hand", "xyz": [0, 0, -0.06]},
        "left_foot": {"link": "l_foot", "xyz": [0.02, 0, -0.09]},
        "right_foot": {"link": "r_foot", "xyz": [0.02, 0, -0.09]},
    }
    sole = [[0.13, 0.055], [0.13, -0.055], [-0.09, -0.055], [-0.09, 0.055]]

    shapes = [
        {"name": "torso_c", "link": "chest", "primitive": "capsule", "start": [0, 0, 0.05], "end": [0, 0, 0.28], "radius": 0.10},
        {"name": "pelvis_c", "link": "pelvis", "primitive": "capsule", "start": [0, -0.08, 0], "end": [0, 0.08, 0], "radius": 0.10},
        {"name": "head_c", "link": "chest", "primitive": "sphere", "center": [0, 0, 0.48], "radius": 0.10},
    ]
    for s in ("l", "r"):
        shapes += [
            {"name": f"{s}_upper_arm_c", "link": f"{s}_upper_arm", "primitive": "capsule",
             "start": [0, 0, -0.07], "end": [0, 0, -0.26], "radius": 0.045},
            {"name": f"{s}_forearm_c", "link": f"{s}_forearm", "primitive": "capsule",
             "start": [0, 0, -0.02], "end": [0, 0, -0.23], "radius": 0.04},
            {"name": f"{s}_hand_c", "link": f"{s}_hand", "primitive": "sphere",
             "center": [0, 0, -0.05], "radius": 0.03},
            {"name": f"{s}_thigh_c", "link": f"{s}_thigh", "primitive": "capsule",
             "start": [0, 0, -0.06], "end": [0, 0, -0.36], "radius": 0.05},
        ]
    pairs = [
        ["l_forearm_c", "torso_c"], ["r_forearm_c", "torso_c"],
        ["l_hand_c", "torso_c"], ["r_hand_c", "torso_c"],
        ["l_upper_arm_c", "torso_c"], ["r_upper_arm_c", "torso_c"],
        ["l_hand_c", "head_c"], ["r_hand_c", "head_c"],
        ["l_hand_c", "l_thigh_c"], ["r_hand_c", "r_thigh_c"],
        ["l_forearm_c", "r_forearm_c"], ["l_hand_c", "r_hand_c"],
    ]
    return {
        "name": "nadia_like",
        "links": links,
        "joints": joints,
        "frames": frames,
        "collision_shapes": shapes,
        "collision_pairs": pairs,
        "foot_polygons": {"left_foot": sole, "right_foot": sole},
        "hand_mounting": {"left": {"rpy": [0, 0, 0]}, "right": {"rpy": [0, 0, 0]}},
    }


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    for doc in (planar_2r(), nadia_like()):
        out = DATA / f"{doc['name']}.model"
        out.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
        njoints = sum(1 for j in doc["joints"] if j["type"] == "revolute")
        mass = sum(l["mass"] for l in doc["links"])
        print(f"{out.name}: {len(doc['links'])} links, {njoints} joints, {mass:.1f} kg")


if __name__ == "__main__":
    main()
