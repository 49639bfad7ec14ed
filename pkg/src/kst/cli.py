"""Command line front end: serve, replay, check-model, bench."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time

import numpy as np

from .config import SessionConfig, load_session_config, resolve_model_path, session_config_from_dict
from .estimation import MotionInput, MotionTarget
from .geometry import Pose
from .model import ModelError, load_model
from .protocol import make_envelope, motion_input_payload
from .runtime import SimClock, StreamingSession, run_replay
from .server import SessionServer

log = logging.getLogger("kst.cli")


def _load_config(path) -> SessionConfig:
    if path is None:
        return session_config_from_dict({})
    return load_session_config(path)


def _add_config_arg(sub) -> None:
    sub.add_argument("--config", default=None,
                     help="session config JSON (defaults used when omitted)")


def cmd_serve(args) -> int:
    config = _load_config(args.config)
    if args.listen:
        host, _, port = args.listen.rpartition(":")
        config.listen_host = host or config.listen_host
        config.listen_port = int(port)
    if args.record:
        config.record_path = args.record
    config.validate()
    server = SessionServer(config)
    server.start_listener()
    print(f"listening on ws://{config.listen_host}:{server.port} "
          f"(mode {config.mode}, model {config.model}, "
          f"tick {config.tick_rate:g} Hz)")
    server.run()
    print(json.dumps(server.session.metrics.snapshot(), indent=2))
    return 0


def cmd_replay(args) -> int:
    config = _load_config(args.config)
    dump = (args.dump_qp, args.dump_qp_out) if args.dump_qp is not None else None
    session = run_replay(config, args.input, speed=args.speed,
                         sim_clock=args.sim_clock, dump_qp=dump)
    snapshot = session.metrics.snapshot()
    if args.metrics_out:
        session.metrics.write_csv(args.metrics_out)
        print(f"metrics written to {args.metrics_out}/", file=sys.stderr)
    print(json.dumps(snapshot, indent=2))
    faults = snapshot["counters"]["fault"]
    return 0 if faults == 0 else 1


def cmd_check_model(args) -> int:
    try:
        path = resolve_model_path(args.model)
        model = load_model(path)
    except (ModelError, ValueError, OSError) as exc:
        print(exc, file=sys.stderr)
        return 2
    print(f"{model.name}: {len(model.link_names)} links, "
          f"{len(model.joint_names)} joints, {model.total_mass:.1f} kg")
    print(f"frames: {', '.join(sorted(model.frames))}")
    print(f"collision pairs: {len(model.collision_pairs)}")
    for j, name in enumerate(model.joint_names):
        print(f"  {name}: range [{model.q_min[j]:+.2f}, {model.q_max[j]:+.2f}] rad, "
              f"vmax {model.velocity_limit[j]:g} rad/s")
    return 0


def cmd_bench(args) -> int:
    config = session_config_from_dict({"model": args.model})
    clock = SimClock()
    session = StreamingSession(config, clock=clock)
    if args.dump_qp is not None:
        session.dump_qp_tick = args.dump_qp
        session.dump_qp_path = args.dump_qp_out

    # synthetic 60 Hz operator: hands sweep circles, pelvis bobs, chest sways
    fk_left = session._frame_pose("left_hand").position.copy()
    fk_right = session._frame_pose("right_hand").position.copy()
    pelvis0 = session._frame_pose("pelvis").position.copy()
    dt_in = 1.0 / config.input_rate
    next_input = 0.0
    seq = 0
    start = time.perf_counter()
    for _ in range(args.ticks):
        if session.now >= next_input - 1e-12:
            t = session.now
            swing = np.array([0.06 * math.sin(2 * math.pi * 0.4 * t),
                              0.06 * math.cos(2 * math.pi * 0.4 * t),
                              0.05 * math.sin(2 * math.pi * 0.25 * t)])
            targets = {
                "left_hand": MotionTarget(Pose(fk_left + swing, np.array([1.0, 0, 0, 0]))),
                "right_hand": MotionTarget(Pose(fk_right + swing * [1, -1, 1], np.array([1.0, 0, 0, 0]))),
                "pelvis": MotionTarget(Pose(pelvis0 + [0, 0, 0.03 * math.sin(2 * math.pi * 0.2 * t)],
                                            np.array([1.0, 0, 0, 0]))),
            }
            minput = MotionInput(timestamp=t, targets=targets)
            env = make_envelope("motion_input", seq, t, motion_input_payload(minput))
            session.ingest_envelope(env, t)
            seq += 1
            next_input += dt_in
        session.tick()
    elapsed = time.perf_counter() - start

    ticks_us = np.asarray(session.metrics.tick_durations_us, dtype=float)
    print(f"{args.ticks} ticks in {elapsed:.2f} s wall "
          f"({args.ticks / elapsed:,.0f} ticks/s throughput)")
    print("tick duration us: "
          + " ".join(f"p{p}={np.percentile(ticks_us, p):,.0f}"
                     for p in (50, 90, 99)) + f" max={ticks_us.max():,.0f}")
    edges = [0, 200, 400, 600, 800, 1000, 1500, 2000, 5000, float("inf")]
    counts, _ = np.histogram(ticks_us, bins=edges)
    width = max(1, int(counts.max()))
    for lo, hi, count in zip(edges[:-1], edges[1:], counts):
        bar = "#" * int(round(40 * count / width))
        label = f"{lo:>5.0f}-{hi:<5.0f}" if math.isfinite(hi) else f"{lo:>5.0f}+     "
        print(f"  {label} us {count:>6d} {bar}")
    iters = np.asarray(session.metrics.qp_iterations, dtype=float)
    print("qp iterations: "
          + " ".join(f"p{p}={np.percentile(iters, p):.0f}" for p in (50, 99)))
    print("qp status:", dict(session.metrics.qp_status))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="kst",
        description="whole-body kinematics streaming: 60 Hz operator targets "
                    "in, 1 kHz joint setpoint stream out")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="host a live WebSocket session")
    _add_config_arg(p_serve)
    p_serve.add_argument("--listen", default=None, metavar="HOST:PORT")
    p_serve.add_argument("--record", default=None, metavar="PATH",
                         help="record accepted inputs to this file")
    p_serve.set_defaults(func=cmd_serve)

    p_replay = sub.add_parser("replay", help="re-run a recorded session")
    _add_config_arg(p_replay)
    p_replay.add_argument("--input", required=True, metavar="REC")
    p_replay.add_argument("--speed", type=float, default=1.0)
    p_replay.add_argument("--sim-clock", action="store_true",
                          help="virtual time: deterministic, runs as fast as possible")
    p_replay.add_argument("--metrics-out", default=None, metavar="DIR")
    p_replay.add_argument("--dump-qp", type=int, default=None, metavar="TICK",
                          help="write the assembled QP at this tick to .npz")
    p_replay.add_argument("--dump-qp-out", default=None, metavar="PATH")
    p_replay.set_defaults(func=cmd_replay)

    p_check = sub.add_parser("check-model", help="validate a model file")
    p_check.add_argument("model", help="model path or bundled name")
    p_check.set_defaults(func=cmd_check_model)

    p_bench = sub.add_parser("bench", help="tick-time histogram on synthetic input")
    p_bench.add_argument("--model", default="nadia_like")
    p_bench.add_argument("--ticks", type=int, default=2000)
    p_bench.add_argument("--dump-qp", type=int, default=None, metavar="TICK")
    p_bench.add_argument("--dump-qp-out", default=None, metavar="PATH")
    p_bench.set_defaults(func=cmd_bench)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
