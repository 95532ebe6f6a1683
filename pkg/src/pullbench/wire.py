"""Wire protocol: 4-byte big-endian length prefix + UTF-8 JSON envelope.

Envelope: {"type": <msg type>, "seq": <int>, "payload": {...}}.  Every
command gets exactly one ack or nack carrying the same seq.  Field-by-field
documentation with hex examples lives in docs/protocol.md.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 1 << 20  # anything larger is treated as stream corruption

LENGTH_PREFIX = struct.Struct(">I")


class MsgType(Enum):
    HELLO = "hello"
    STATUS = "status"
    COMMAND = "command"
    ACK = "ack"
    NACK = "nack"
    TELEMETRY = "telemetry"
    EVENT = "event"


class NackError(Enum):
    BUSY = "busy"
    RANGE = "range"
    UNSUPPORTED = "unsupported"
    MALFORMED = "malformed"
    BAD_STATE = "bad_state"
    FAULT = "fault"


class WireFormatError(ValueError):
    """Frame bytes do not decode to a valid envelope."""


@dataclass(frozen=True)
class WireMessage:
    msg_type: MsgType
    seq: int
    payload: dict = field(default_factory=dict)


def encode_message(msg: WireMessage) -> bytes:
    body = json.dumps(
        {"type": msg.msg_type.value, "seq": msg.seq, "payload": msg.payload},
        separators=(",", ":"),
        sort_keys=True,
        allow_nan=False,
    ).encode("utf-8")
    return LENGTH_PREFIX.pack(len(body)) + body


def decode_body(body: bytes) -> WireMessage:
    """Decode the JSON body of one frame (after the length prefix)."""
    try:
        obj = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireFormatError(f"frame body is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise WireFormatError("frame body must be a JSON object")
    try:
        msg_type = MsgType(obj["type"])
    except (KeyError, ValueError):
        raise WireFormatError(f"unknown or missing message type: {obj.get('type')!r}") from None
    seq = obj.get("seq")
    if not isinstance(seq, int) or isinstance(seq, bool) or seq < 0:
        raise WireFormatError(f"seq must be a non-negative integer, got {seq!r}")
    payload = obj.get("payload", {})
    if not isinstance(payload, dict):
        raise WireFormatError("payload must be a JSON object")
    return WireMessage(msg_type, seq, payload)


def decode_frame(frame: bytes) -> WireMessage:
    """Decode one complete frame (length prefix + body)."""
    if len(frame) < 4:
        raise WireFormatError(f"truncated length prefix ({len(frame)} bytes)")
    (declared,) = LENGTH_PREFIX.unpack_from(frame)
    if declared > MAX_FRAME_BYTES:
        raise WireFormatError(f"declared frame length {declared} exceeds maximum")
    if declared != len(frame) - 4:
        raise WireFormatError(
            f"declared length {declared} does not match body length {len(frame) - 4}"
        )
    return decode_body(frame[4:])


class StreamDecoder:
    """Incremental frame extractor for a byte stream.

    feed() returns a list of (message, error) pairs: exactly one of the two
    is set per entry.  An implausible length prefix cannot be resynchronized
    reliably, so pending bytes are dropped; senders writing whole frames
    recover on their next frame.
    """

    def __init__(self, max_frame_bytes: int = MAX_FRAME_BYTES):
        self._buf = bytearray()
        self._max = max_frame_bytes

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)

    def feed(self, data: bytes) -> list[tuple[WireMessage | None, WireFormatError | None]]:
        self._buf.extend(data)
        out: list[tuple[WireMessage | None, WireFormatError | None]] = []
        while len(self._buf) >= 4:
            (declared,) = LENGTH_PREFIX.unpack_from(self._buf)
            if declared > self._max:
                out.append(
                    (None, WireFormatError(f"declared frame length {declared} exceeds maximum"))
                )
                self._buf.clear()
                break
            if len(self._buf) < 4 + declared:
                break
            body = bytes(self._buf[4 : 4 + declared])
            del self._buf[: 4 + declared]
            try:
                out.append((decode_body(body), None))
            except WireFormatError as exc:
                out.append((None, exc))
        return out

    def flush_partial(self) -> WireFormatError | None:
        """Discard a stalled partial frame (sender went quiet mid-frame)."""
        if not self._buf:
            return None
        err = WireFormatError(f"truncated frame ({len(self._buf)} bytes pending)")
        self._buf.clear()
        return err


# ---------------------------------------------------------------------------
# message constructors
# ---------------------------------------------------------------------------

def hello(seq: int, role: str, **extra) -> WireMessage:
    return WireMessage(MsgType.HELLO, seq, {"role": role, "protocol_version": PROTOCOL_VERSION, **extra})


def command(seq: int, name: str, **args) -> WireMessage:
    return WireMessage(MsgType.COMMAND, seq, {"name": name, "args": args})


def ack(seq: int, **payload) -> WireMessage:
    return WireMessage(MsgType.ACK, seq, payload)


def nack(seq: int, error: NackError, message: str, **extra) -> WireMessage:
    return WireMessage(MsgType.NACK, seq, {"error": error.value, "message": message, **extra})


def event(seq: int, name: str, **payload) -> WireMessage:
    return WireMessage(MsgType.EVENT, seq, {"name": name, **payload})


def telemetry(seq: int, frame_payload: dict) -> WireMessage:
    return WireMessage(MsgType.TELEMETRY, seq, frame_payload)
