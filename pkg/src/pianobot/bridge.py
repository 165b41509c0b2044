"""Line-delimited JSON bridge between the episode loop and an external
plant.

Wire format (UTF-8, one object per line):
  host -> device: {"t": <int>, "cmd": [13 floats]}
  device -> host: {"t": <int>, "keys": [pressed key indices],
                   "joints": [13 floats]}   # joints optional

The host gives the device 25 ms per control step. A missed deadline reuses
the last known state (logged); three consecutive misses abort the episode.
"""

from __future__ import annotations

import json
import socket
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import constants as C
from .errors import BridgeProtocolError, BridgeTimeoutError

DEADLINE_S = 0.025
MAX_CONSECUTIVE_MISSES = 3


@dataclass
class BridgeReply:
    t: int
    keys: np.ndarray          # (49,) bool
    joints: np.ndarray        # (13,) float or None
    fresh: bool               # False when a deadline miss reused old state


class LoopbackTransport:
    """Zero-latency in-process transport: send_line hands the message to a
    device callable and queues its reply. Optional per-step delays (seconds,
    by step index) simulate a slow device for the timeout paths."""

    def __init__(self, device, delays=None):
        self._device = device
        self._queue = deque()
        self._delays = dict(delays or {})
        self._sent = 0

    def send_line(self, line: str) -> None:
        reply = self._device(line)
        delay = self._delays.get(self._sent, 0.0)
        self._sent += 1
        if reply is not None:
            self._queue.append((delay, reply))

    def recv_line(self, timeout: float):
        if not self._queue:
            return None
        delay, reply = self._queue[0]
        if delay > timeout:
            # too slow for this deadline; the reply stays queued with the
            # remaining delay, like bytes still in flight
            self._queue[0] = (delay - timeout, reply)
            return None
        self._queue.popleft()
        return reply

    def close(self) -> None:
        pass


class SocketTransport:
    """Blocking TCP transport with per-recv deadline."""

    def __init__(self, host: str, port: int):
        self._sock = socket.create_connection((host, port))
        self._buf = b""

    def send_line(self, line: str) -> None:
        self._sock.sendall(line.encode("utf-8") + b"\n")

    def recv_line(self, timeout: float):
        deadline = time.monotonic() + timeout
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None
            self._sock.settimeout(remaining)
            try:
                chunk = self._sock.recv(4096)
            except socket.timeout:
                return None
            if not chunk:
                raise BridgeProtocolError("connection closed by device")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line.decode("utf-8")

    def close(self) -> None:
        self._sock.close()


def _keys_to_mask(indices) -> np.ndarray:
    mask = np.zeros(C.KEY_COUNT, dtype=bool)
    for k in indices:
        if not isinstance(k, int) or not 0 <= k < C.KEY_COUNT:
            raise BridgeProtocolError(f"key index {k!r} out of range")
        mask[k] = True
    return mask


class BridgeClient:
    def __init__(self, transport, deadline_s: float = DEADLINE_S,
                 max_misses: int = MAX_CONSECUTIVE_MISSES):
        self.transport = transport
        self.deadline_s = deadline_s
        self.max_misses = max_misses
        self.consecutive_misses = 0
        self.total_misses = 0
        self._last_keys = np.zeros(C.KEY_COUNT, dtype=bool)
        self._last_joints = None

    def _parse_reply(self, line: str) -> dict:
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BridgeProtocolError(
                f"malformed bridge line {line!r}: {exc}") from None
        if not isinstance(msg, dict) or "t" not in msg or "keys" not in msg:
            raise BridgeProtocolError(f"bridge reply missing fields: {line!r}")
        return msg

    def step(self, t: int, cmd: np.ndarray) -> BridgeReply:
        """Send joint targets for step t, collect the reply within the
        deadline; reuse last state on a miss."""
        cmd = np.asarray(cmd, dtype=np.float64)
        if cmd.shape != (C.JOINT_COUNT,):
            raise BridgeProtocolError(f"cmd must be 13 floats, got {cmd.shape}")
        self.transport.send_line(json.dumps(
            {"t": int(t), "cmd": [float(v) for v in cmd]}))
        deadline = self.deadline_s
        while True:
            line = self.transport.recv_line(deadline)
            if line is None:
                self.consecutive_misses += 1
                self.total_misses += 1
                if self.consecutive_misses >= self.max_misses:
                    raise BridgeTimeoutError(
                        f"{self.consecutive_misses} consecutive deadline "
                        f"misses at step {t}")
                return BridgeReply(t=int(t), keys=self._last_keys.copy(),
                                   joints=None if self._last_joints is None
                                   else self._last_joints.copy(),
                                   fresh=False)
            msg = self._parse_reply(line)
            if msg["t"] != t:
                # stale reply from a previous (missed) step; drain and keep
                # waiting within the same deadline budget
                continue
            keys = _keys_to_mask(msg["keys"])
            joints = None
            if "joints" in msg and msg["joints"] is not None:
                joints = np.asarray(msg["joints"], dtype=np.float64)
                if joints.shape != (C.JOINT_COUNT,):
                    raise BridgeProtocolError(
                        f"joints must be 13 floats, got {joints.shape}")
            self.consecutive_misses = 0
            self._last_keys = keys.copy()
            self._last_joints = None if joints is None else joints.copy()
            return BridgeReply(t=int(t), keys=keys, joints=joints, fresh=True)

    def close(self) -> None:
        self.transport.close()


class PlantDevice:
    """Device-side handler around an internal plant model: one request line
    in, one reply line out. Usable directly as a LoopbackTransport device or
    inside serve_forever for TCP."""

    def __init__(self, plant_model, send_joints: bool = True):
        self.plant = plant_model
        self.send_joints = send_joints

    def __call__(self, line: str):
        try:
            msg = json.loads(line)
            t = int(msg["t"])
            cmd = np.asarray(msg["cmd"], dtype=np.float64)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise BridgeProtocolError(
                f"malformed command line {line!r}: {exc}") from None
        self.plant.advance(cmd)
        pressed = self.plant.pressed()
        reply = {"t": t, "keys": [int(k) for k in np.flatnonzero(pressed)]}
        if self.send_joints:
            reply["joints"] = [float(v) for v in self.plant.state.q]
        return json.dumps(reply)


def serve_forever(device: PlantDevice, host: str, port: int) -> None:
    """Single-connection TCP server for running a plant out of process."""
    srv = socket.create_server((host, port))
    conn, _ = srv.accept()
    buf = b""
    try:
        while True:
            chunk = conn.recv(4096)
            if not chunk:
                return
            buf += chunk
            while b"\n" in buf:
                line, buf = buf.split(b"\n", 1)
                reply = device(line.decode("utf-8"))
                if reply is not None:
                    conn.sendall(reply.encode("utf-8") + b"\n")
    finally:
        conn.close()
        srv.close()
