"""Session configuration: one dataclass tree, loadable from JSON.

Unknown keys are errors (typos should not silently fall back to defaults).
Bundled model names ("nadia_like", "planar_2r") resolve to the package data
directory; anything else is treated as a filesystem path.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .estimation import EstimatorParams, SafetyLimits
from .ik import IKConfig
from .postprocess import PostProcessConfig
from .retarget import FootstepParams

_DATA_DIR = Path(__file__).parent / "data"


def resolve_model_path(spec: str) -> Path:
    p = Path(spec)
    if p.exists():
        return p
    name = spec if spec.endswith(".model") else spec + ".model"
    bundled = _DATA_DIR / name
    if "/" not in spec and bundled.exists():
        return bundled
    raise FileNotFoundError(f"model '{spec}' not found (not a file, not bundled)")


@dataclass
class SessionConfig:
    model: str = "nadia_like"
    tick_rate: float = 1000.0          # Hz
    input_rate: float = 60.0           # Hz, expectation used for validation windows
    mode: str = "motion_input"         # motion_input | tracker_frame
    clock: str = "real"                # real | simulated
    listen_host: str = "127.0.0.1"
    listen_port: int = 8765
    broadcast_rate: float = 60.0       # Hz, joint_frame decimation
    record_path: Optional[str] = None
    replay_path: Optional[str] = None
    metrics_dir: Optional[str] = None
    swing_duration: float = 0.6        # s per footstep
    swing_apex: float = 0.05           # m parabolic swing height
    pelvis_scale_xy: bool = True       # scale horizontal waist displacement by the leg ratio
    initial_joint_positions: dict = field(default_factory=dict)   # name -> rad
    footsteps: FootstepParams = field(default_factory=FootstepParams)
    safety: SafetyLimits = field(default_factory=SafetyLimits)
    estimator: EstimatorParams = field(default_factory=EstimatorParams)
    ik: IKConfig = field(default_factory=IKConfig)
    postprocess: PostProcessConfig = field(default_factory=PostProcessConfig)

    @property
    def dt_tick(self) -> float:
        return 1.0 / self.tick_rate

    def validate(self) -> None:
        if self.tick_rate <= 0 or self.input_rate <= 0:
            raise ValueError("rates must be positive")
        if self.tick_rate < self.input_rate:
            raise ValueError("tick_rate must be >= input_rate")
        if self.mode not in ("motion_input", "tracker_frame"):
            raise ValueError(f"unknown mode '{self.mode}'")
        if self.clock not in ("real", "simulated"):
            raise ValueError(f"unknown clock '{self.clock}'")
        if self.broadcast_rate <= 0 or self.broadcast_rate > self.tick_rate:
            raise ValueError("broadcast_rate must be in (0, tick_rate]")
        if self.swing_duration <= 0 or self.swing_apex < 0:
            raise ValueError("swing_duration > 0 and swing_apex >= 0 required")
        resolve_model_path(self.model)
        self.ik.dt_tick = self.dt_tick
        self.ik.validate()
        self.postprocess.validate()


_ARRAY_FIELDS = {"box_min", "box_max", "q_nom"}


def _build_dataclass(cls, data: dict, ctx: str):
    if not isinstance(data, dict):
        raise ValueError(f"{ctx}: expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"{ctx}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if f.name in _ARRAY_FIELDS and value is not None:
            value = np.asarray(value, dtype=float)
        kwargs[f.name] = value
    return cls(**kwargs)


_SECTIONS = {
    "footsteps": FootstepParams,
    "safety": SafetyLimits,
    "estimator": EstimatorParams,
    "ik": IKConfig,
    "postprocess": PostProcessConfig,
}


def session_config_from_dict(data: dict) -> SessionConfig:
    if not isinstance(data, dict):
        raise ValueError("session config must be a JSON object")
    names = {f.name for f in dataclasses.fields(SessionConfig)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"session config: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _build_dataclass(_SECTIONS[key], value, key)
        else:
            kwargs[key] = value
    config = SessionConfig(**kwargs)
    config.validate()
    return config


def load_session_config(path) -> SessionConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return session_config_from_dict(data)
