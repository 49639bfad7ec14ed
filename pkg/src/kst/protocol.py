"""Wire protocol: versioned JSON envelopes over WebSocket framing.

Every message is one UTF-8 JSON text frame:

    {"v": 1, "type": <str>, "seq": <int>, "t_send_s": <float>, "payload": {...}}

Client -> server types: hello, tracker_frame, motion_input, footstep_command,
model_summary (request).  Server -> client: hello, joint_frame (decimated),
footstep_command_ack, metrics_snapshot, model_summary, error.  Unknown payload
fields are ignored; unknown types and malformed envelopes get an error reply.
Positions are meters, orientations are wxyz quaternions, angles radians.

The framing layer implements the server side of RFC 6455 (text frames, ping/
pong, close) plus a minimal client for tests, over blocking stdlib sockets.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import socket
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .estimation import MotionInput, MotionTarget
from .geometry import Pose, quat_normalize
from .retarget import FootstepCommand, TrackerBundle

PROTOCOL_VERSION = 1
TRACKER_NAMES = ("headset", "controller_left", "controller_right",
                 "chest", "waist", "ankle_left", "ankle_right")
CLIENT_TYPES = ("hello", "tracker_frame", "motion_input", "footstep_command",
                "model_summary")
SERVER_TYPES = ("hello", "joint_frame", "footstep_command_ack",
                "metrics_snapshot", "model_summary", "error")


class ProtocolError(Exception):
    pass


def make_envelope(msg_type: str, seq: int, t_send_s: float, payload) -> dict:
    return {"v": PROTOCOL_VERSION, "type": msg_type, "seq": int(seq),
            "t_send_s": float(t_send_s), "payload": payload}


def encode_envelope(envelope: dict) -> str:
    return json.dumps(envelope, separators=(",", ":"))


def parse_envelope(text: str) -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ProtocolError("envelope must be an object")
    if data.get("v") != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported protocol version {data.get('v')!r}")
    for key, kinds in (("type", str), ("seq", int), ("t_send_s", (int, float))):
        if key not in data:
            raise ProtocolError(f"envelope missing '{key}'")
        if not isinstance(data[key], kinds) or isinstance(data[key], bool):
            raise ProtocolError(f"envelope field '{key}' has wrong type")
    payload = data.get("payload")
    if payload is None:
        payload = {}
    if not isinstance(payload, dict):
        raise ProtocolError("payload must be an object")
    return {"v": 1, "type": data["type"], "seq": data["seq"],
            "t_send_s": float(data["t_send_s"]), "payload": payload}


def _vec(payload, key: str, length: int, ctx: str) -> np.ndarray:
    value = payload.get(key)
    if (not isinstance(value, (list, tuple)) or len(value) != length
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value)):
        raise ProtocolError(f"{ctx}: '{key}' must be a list of {length} numbers")
    arr = np.asarray(value, dtype=float)
    if not np.isfinite(arr).all():
        raise ProtocolError(f"{ctx}: '{key}' must be finite")
    return arr


def _pose(payload, ctx: str) -> Pose:
    if not isinstance(payload, dict):
        raise ProtocolError(f"{ctx}: pose must be an object")
    position = _vec(payload, "position", 3, ctx)
    quat = _vec(payload, "orientation_wxyz", 4, ctx)
    norm = float(np.linalg.norm(quat))
    if abs(norm - 1.0) > 1e-3:
        raise ProtocolError(f"{ctx}: orientation_wxyz not unit-norm ({norm:.4f})")
    return Pose(position, quat_normalize(quat))


def pose_to_payload(pose: Pose) -> dict:
    return {"position": [float(x) for x in pose.position],
            "orientation_wxyz": [float(x) for x in pose.orientation]}


# ---------------------------------------------------------------- payloads


def parse_tracker_frame(payload: dict) -> TrackerBundle:
    ts = payload.get("timestamp_s")
    if not isinstance(ts, (int, float)) or isinstance(ts, bool):
        raise ProtocolError("tracker_frame: 'timestamp_s' must be a number")
    trackers = payload.get("trackers")
    if not isinstance(trackers, dict):
        raise ProtocolError("tracker_frame: 'trackers' must be an object")
    poses = {}
    for name in TRACKER_NAMES:
        if name not in trackers:
            raise ProtocolError(f"tracker_frame: missing tracker '{name}'")
        poses[name] = _pose(trackers[name], f"tracker '{name}'")
    return TrackerBundle(float(ts), **poses)


def tracker_frame_payload(bundle: TrackerBundle) -> dict:
    return {"timestamp_s": float(bundle.timestamp),
            "trackers": {nm: pose_to_payload(bundle.pose(nm)) for nm in TRACKER_NAMES}}


def parse_motion_input(payload: dict) -> MotionInput:
    ts = payload.get("timestamp_s")
    if not isinstance(ts, (int, float)) or isinstance(ts, bool):
        raise ProtocolError("motion_input: 'timestamp_s' must be a number")
    raw = payload.get("targets")
    if not isinstance(raw, dict):
        raise ProtocolError("motion_input: 'targets' must be an object")
    targets = {}
    for body, entry in raw.items():
        if not isinstance(entry, dict):
            raise ProtocolError(f"motion_input: target '{body}' must be an object")
        pose = _pose(entry, f"target '{body}'")
        linear = entry.get("linear_enabled", True)
        angular = entry.get("angular_enabled", True)
        if not isinstance(linear, bool) or not isinstance(angular, bool):
            raise ProtocolError(f"motion_input: target '{body}' enable flags must be booleans")
        targets[str(body)] = MotionTarget(pose, linear, angular)
    com = None
    if payload.get("com_ground") is not None:
        com = _vec(payload, "com_ground", 2, "motion_input")
    return MotionInput(float(ts), targets, com_ground=com)


def motion_input_payload(minput: MotionInput) -> dict:
    targets = {}
    for body, t in minput.targets.items():
        entry = pose_to_payload(t.pose)
        entry["linear_enabled"] = bool(t.linear_enabled)
        entry["angular_enabled"] = bool(t.angular_enabled)
        targets[body] = entry
    out = {"timestamp_s": float(minput.timestamp), "targets": targets}
    if minput.com_ground is not None:
        out["com_ground"] = [float(x) for x in minput.com_ground]
    return out


def parse_footstep_command(payload: dict) -> FootstepCommand:
    side = payload.get("side")
    if side not in ("left", "right"):
        raise ProtocolError("footstep_command: 'side' must be 'left' or 'right'")
    pose = _pose(payload.get("pose"), "footstep_command pose")
    ts = payload.get("timestamp_s", 0.0)
    if not isinstance(ts, (int, float)) or isinstance(ts, bool):
        raise ProtocolError("footstep_command: 'timestamp_s' must be a number")
    return FootstepCommand(side, pose, float(ts))


def footstep_command_payload(cmd: FootstepCommand) -> dict:
    return {"side": cmd.side, "pose": pose_to_payload(cmd.pose),
            "timestamp_s": float(cmd.timestamp)}


def parse_hello(payload: dict) -> str:
    mode = payload.get("mode")
    if mode not in ("motion_input", "tracker_frame"):
        raise ProtocolError("hello: 'mode' must be 'motion_input' or 'tracker_frame'")
    return mode


def joint_frame_payload(frame, joint_names) -> dict:
    return {
        "tick": int(frame.tick_index),
        "timestamp_s": float(frame.timestamp),
        "base": {
            "position": [float(x) for x in frame.base_pose.position],
            "orientation_wxyz": [float(x) for x in frame.base_pose.orientation],
            "twist_angular": [float(x) for x in frame.base_twist.angular],
            "twist_linear": [float(x) for x in frame.base_twist.linear],
            "accel": [float(x) for x in frame.base_accel],
        },
        "joint_names": list(joint_names),
        "q": [float(x) for x in frame.q_fb],
        "qd": [float(x) for x in frame.qd_fb],
        "qdd": [float(x) for x in frame.qdd_fb],
    }


def model_summary_payload(model) -> dict:
    joints = []
    for j, name in enumerate(model.joint_names):
        joints.append({
            "name": name,
            "parent_link": model.link_names[model.joint_parent[j]],
            "child_link": model.link_names[j + 1],
            "origin_xyz": [float(x) for x in model.origin_pos[j]],
            "origin_rot": [[float(x) for x in row] for row in model.origin_rot[j]],
            "axis": [float(x) for x in model.joint_axis[j]],
            "q_min": float(model.q_min[j]),
            "q_max": float(model.q_max[j]),
        })
    frames = {name: {"link": model.link_names[fd.link],
                     "xyz": [float(x) for x in fd.pos]}
              for name, fd in model.frames.items()}
    return {"name": model.name, "link_names": list(model.link_names),
            "joints": joints, "frames": frames,
            "foot_polygons": {side: [[float(v) for v in vert] for vert in poly]
                              for side, poly in model.foot_polygons.items()}}


def error_payload(message: str, detail: Optional[str] = None) -> dict:
    out = {"message": str(message)}
    if detail:
        out["detail"] = str(detail)
    return out


# ---------------------------------------------------------------- websocket

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


def _accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + _WS_GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


def _read_exact(sock: socket.socket, count: int) -> bytes:
    chunks = []
    remaining = count
    while remaining > 0:
        chunk = sock.recv(remaining)
        if not chunk:
            raise ConnectionError("socket closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _encode_frame(opcode: int, payload: bytes, mask: bool) -> bytes:
    header = bytearray([0x80 | opcode])
    length = len(payload)
    mask_bit = 0x80 if mask else 0
    if length < 126:
        header.append(mask_bit | length)
    elif length < 1 << 16:
        header.append(mask_bit | 126)
        header += struct.pack(">H", length)
    else:
        header.append(mask_bit | 127)
        header += struct.pack(">Q", length)
    if mask:
        key = os.urandom(4)
        header += key
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    return bytes(header) + payload


class WebSocketConnection:
    """One established connection; blocking send/receive of text messages."""

    def __init__(self, sock: socket.socket, server_side: bool):
        self.sock = sock
        self.server_side = server_side
        self.closed = False

    def send_text(self, text: str) -> None:
        frame = _encode_frame(0x1, text.encode("utf-8"), mask=not self.server_side)
        self.sock.sendall(frame)

    def _read_frame(self):
        b0, b1 = _read_exact(self.sock, 2)
        fin = bool(b0 & 0x80)
        opcode = b0 & 0x0F
        masked = bool(b1 & 0x80)
        length = b1 & 0x7F
        if length == 126:
            length = struct.unpack(">H", _read_exact(self.sock, 2))[0]
        elif length == 127:
            length = struct.unpack(">Q", _read_exact(self.sock, 8))[0]
        key = _read_exact(self.sock, 4) if masked else None
        payload = _read_exact(self.sock, length) if length else b""
        if key:
            payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
        return fin, opcode, payload

    def receive_text(self) -> Optional[str]:
        """Next text message, or None once the peer closes."""
        buffer = b""
        while True:
            if self.closed:
                return None
            try:
                fin, opcode, payload = self._read_frame()
            except (ConnectionError, OSError):
                self.closed = True
                return None
            if opcode == 0x8:                         # close
                try:
                    self.sock.sendall(_encode_frame(0x8, payload,
                                                    mask=not self.server_side))
                except OSError:
                    pass
                self.closed = True
                return None
            if opcode == 0x9:                         # ping -> pong
                self.sock.sendall(_encode_frame(0xA, payload,
                                                mask=not self.server_side))
                continue
            if opcode == 0xA:                         # pong
                continue
            if opcode in (0x1, 0x0):
                buffer += payload
                if fin:
                    return buffer.decode("utf-8", errors="replace")
                continue
            if opcode == 0x2:
                raise ProtocolError("binary frames are not part of this protocol")
            raise ProtocolError(f"unexpected websocket opcode {opcode}")

    def close(self) -> None:
        if not self.closed:
            try:
                self.sock.sendall(_encode_frame(0x8, b"", mask=not self.server_side))
            except OSError:
                pass
            self.closed = True
        try:
            self.sock.close()
        except OSError:
            pass


def accept_websocket(sock: socket.socket) -> WebSocketConnection:
    """Perform the server side of the HTTP upgrade handshake."""
    data = b""
    while b"\r\n\r\n" not in data:
        chunk = sock.recv(4096)
        if not chunk:
            raise ConnectionError("client closed during handshake")
        data += chunk
        if len(data) > 65536:
            raise ProtocolError("handshake request too large")
    head = data.split(b"\r\n\r\n", 1)[0].decode("latin-1")
    lines = head.split("\r\n")
    if not lines[0].startswith("GET "):
        raise ProtocolError("handshake: expected GET request")
    headers = {}
    for line in lines[1:]:
        if ":" in line:
            key, value = line.split(":", 1)
            headers[key.strip().lower()] = value.strip()
    key = headers.get("sec-websocket-key")
    if not key or "websocket" not in headers.get("upgrade", "").lower():
        raise ProtocolError("handshake: not a websocket upgrade")
    response = ("HTTP/1.1 101 Switching Protocols\r\n"
                "Upgrade: websocket\r\n"
                "Connection: Upgrade\r\n"
                f"Sec-WebSocket-Accept: {_accept_key(key)}\r\n\r\n")
    sock.sendall(response.encode("latin-1"))
    return WebSocketConnection(sock, server_side=True)


def connect_websocket(host: str, port: int, timeout: float = 5.0) -> WebSocketConnection:
    """Minimal client handshake (used by tests and the replay feeder)."""
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.settimeout(timeout)
    key = base64.b64encode(os.urandom(16)).decode("ascii")
    request = (f"GET / HTTP/1.1\r\nHost: {host}:{port}\r\n"
               "Upgrade: websocket\r\nConnection: Upgrade\r\n"
               f"Sec-WebSocket-Key: {key}\r\n"
               "Sec-WebSocket-Version: 13\r\n\r\n")
    sock.sendall(request.encode("latin-1"))
    data = b""
    while b"\r\n\r\n" not in data:
        chunk = sock.recv(4096)
        if not chunk:
            raise ConnectionError("server closed during handshake")
        data += chunk
    head = data.split(b"\r\n\r\n", 1)[0].decode("latin-1")
    if "101" not in head.split("\r\n")[0]:
        raise ProtocolError(f"handshake rejected: {head.splitlines()[0]}")
    accept = None
    for line in head.split("\r\n")[1:]:
        if line.lower().startswith("sec-websocket-accept:"):
            accept = line.split(":", 1)[1].strip()
    if accept != _accept_key(key):
        raise ProtocolError("handshake: bad accept key")
    return WebSocketConnection(sock, server_side=False)
