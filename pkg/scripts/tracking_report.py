"""Replay a recording and report per-body tracking quality.

Writes the metrics CSV set next to the report. Error columns cover each
body's controlled subspace (hands full position, pelvis height only, chest
orientation only), so walking forward under a held pelvis target does not
read as error.

usage: python3 scripts/tracking_report.py [recording] [out_dir]
"""

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from kst.config import session_config_from_dict
from kst.runtime import run_replay

DEFAULT_REC = Path(__file__).resolve().parent.parent / "src" / "kst" / "data" / "demo_10s.rec"


def main():
    rec = Path(sys.argv[1]) if len(sys.argv) > 1 else DEFAULT_REC
    out = Path(sys.argv[2]) if len(sys.argv) > 2 else Path("tracking_report")
    header = json.loads(open(rec, encoding="utf-8").readline())
    config = session_config_from_dict({"mode": header["mode"], "model": header["model"]})
    session = run_replay(config, rec, sim_clock=True)
    m = session.metrics
    m.write_csv(out)

    print(f"recording: {rec.name} ({m.inputs_accepted} inputs, "
          f"{m.frames_emitted} frames)")
    print(f"{'body':<12} {'rms_pos_m':>10} {'max_pos_m':>10} "
          f"{'rms_ang_rad':>12} {'max_ang_rad':>12}")
    for body, rows in sorted(m.tracking.items()):
        pos = np.array([r[-2] for r in rows])
        ang = np.array([r[-1] for r in rows])
        print(f"{body:<12} {np.sqrt(np.mean(pos**2)):>10.4f} {pos.max():>10.4f} "
              f"{np.sqrt(np.mean(ang**2)):>12.4f} {ang.max():>12.4f}")
    snap = m.snapshot()
    print("latency ms:", {k: round(v, 3) for k, v in snap["latency_ms"].items()})
    print("tick us:   ", {k: round(v, 1) for k, v in snap["tick_us"].items()})
    print("qp status: ", snap["qp"]["status"],
          f"(p99 {snap['qp']['iterations_p99']:.0f} iterations)")
    print("counters:  ", snap["counters"])
    print(f"csv written to {out}/")


if __name__ == "__main__":
    main()
