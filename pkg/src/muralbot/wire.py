"""Operator-console wire protocol: newline-delimited JSON frames.

Each frame is one line: {"type": ..., "seq": ..., "t": ..., "payload": {...}}.
Sequence numbers increase strictly per direction; the server echoes the
last client seq it acted on inside every StateUpdate.  The schema is the
contract -- the same frames travel over plain TCP (scripted clients,
tests) and WebSocket (the browser console).

Server -> client: StateUpdate (10 Hz), CaptureAck, ModeAck, Alarm.
Client -> server: JoystickCmd {vx, vy, deadman}, CapturePoint {grid_id |
x, y}, SetMode {mode}, Pause, Resume, EStop.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import PreconditionError

SERVER_TYPES = frozenset({"StateUpdate", "CaptureAck", "ModeAck", "Alarm"})
CLIENT_TYPES = frozenset(
    {"JoystickCmd", "CapturePoint", "SetMode", "Pause", "Resume", "EStop"}
)


@dataclass(frozen=True)
class WireMessage:
    type: str
    seq: int
    timestamp: float
    payload: dict = field(default_factory=dict)


def encode_message(msg: WireMessage) -> str:
    """One frame per line, newline-terminated."""
    return (
        json.dumps(
            {"type": msg.type, "seq": msg.seq, "t": round(msg.timestamp, 6), "payload": msg.payload},
            separators=(",", ":"),
        )
        + "\n"
    )


def decode_message(line: str) -> WireMessage:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise PreconditionError(f"malformed wire frame: {e}") from e
    for key in ("type", "seq", "t"):
        if key not in obj:
            raise PreconditionError(f"wire frame missing {key!r}: {line!r}")
    msg_type = obj["type"]
    if msg_type not in SERVER_TYPES | CLIENT_TYPES:
        raise PreconditionError(f"unknown wire message type {msg_type!r}")
    return WireMessage(msg_type, int(obj["seq"]), float(obj["t"]), obj.get("payload", {}))


class SeqCounter:
    """Strictly increasing outbound sequence numbers."""

    def __init__(self):
        self._next = 0

    def take(self) -> int:
        seq = self._next
        self._next += 1
        return seq


class SeqValidator:
    """Rejects inbound frames that do not strictly increase."""

    def __init__(self):
        self.last: int | None = None

    def check(self, seq: int) -> bool:
        if self.last is not None and seq <= self.last:
            return False
        self.last = seq
        return True
