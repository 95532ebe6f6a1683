"""Client side of the daemon protocol: control channel and telemetry taps."""

from __future__ import annotations

import queue
import socket
import threading
from typing import Iterator, Optional

from . import wire
from .wire import MsgType, WireMessage


class LinkError(ConnectionError):
    """Transport-level failure talking to a daemon or gateway."""


class CommandRejected(RuntimeError):
    def __init__(self, nack: WireMessage):
        self.nack = nack
        payload = nack.payload
        super().__init__(f"{payload.get('error')}: {payload.get('message')}")


class ControlClient:
    """Single control connection: serialized request/response plus an event queue."""

    def __init__(self, host: str, port: int, role: str = "control",
                 connect_timeout: float = 5.0, request_timeout: float = 10.0):
        self.request_timeout = request_timeout
        try:
            self._sock = socket.create_connection((host, port), timeout=connect_timeout)
        except OSError as exc:
            raise LinkError(f"cannot connect to {host}:{port}: {exc}") from exc
        self._sock.settimeout(None)
        self._seq = 0
        self._responses: "queue.Queue[WireMessage]" = queue.Queue()
        self.events: "queue.Queue[WireMessage]" = queue.Queue()
        self.telemetry: "queue.Queue[WireMessage]" = queue.Queue()
        self.status: "queue.Queue[WireMessage]" = queue.Queue()
        self._closed = threading.Event()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        reply = self._request_raw(wire.hello(self._next_seq(), role))
        if reply.msg_type is not MsgType.ACK:
            self.close()
            raise CommandRejected(reply)
        self.hello_info = reply.payload

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _read_loop(self) -> None:
        decoder = wire.StreamDecoder()
        while not self._closed.is_set():
            try:
                data = self._sock.recv(65536)
            except OSError:
                break
            if not data:
                break
            for msg, err in decoder.feed(data):
                if err is not None:
                    continue  # daemon never sends malformed frames; ignore noise
                if msg.msg_type in (MsgType.ACK, MsgType.NACK):
                    self._responses.put(msg)
                elif msg.msg_type is MsgType.EVENT:
                    self.events.put(msg)
                elif msg.msg_type is MsgType.TELEMETRY:
                    self.telemetry.put(msg)
                elif msg.msg_type is MsgType.STATUS:
                    self.status.put(msg)
        self._closed.set()

    def _request_raw(self, msg: WireMessage) -> WireMessage:
        if self._closed.is_set():
            raise LinkError("connection closed")
        try:
            self._sock.sendall(wire.encode_message(msg))
        except OSError as exc:
            raise LinkError(f"send failed: {exc}") from exc
        deadline = self.request_timeout
        while True:
            try:
                reply = self._responses.get(timeout=deadline)
            except queue.Empty:
                raise LinkError(f"no reply to seq {msg.seq} within {self.request_timeout}s")
            if reply.seq == msg.seq:
                return reply
            # stale or unsolicited response (e.g. malformed-frame nack): skip

    def request(self, name: str, **args) -> WireMessage:
        """Send a command; returns the ack, raises CommandRejected on nack."""
        reply = self._request_raw(wire.command(self._next_seq(), name, **args))
        if reply.msg_type is MsgType.NACK:
            raise CommandRejected(reply)
        return reply

    def try_request(self, name: str, **args) -> WireMessage:
        """Send a command; returns ack or nack without raising."""
        return self._request_raw(wire.command(self._next_seq(), name, **args))

    def next_event(self, timeout: float) -> Optional[WireMessage]:
        try:
            return self.events.get(timeout=timeout)
        except queue.Empty:
            return None

    def wait_event(self, name: str, timeout: float) -> WireMessage:
        import time

        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0.0:
                raise LinkError(f"event {name!r} not seen within {timeout}s")
            evt = self.next_event(remaining)
            if evt is not None and evt.payload.get("name") == name:
                return evt

    @property
    def connected(self) -> bool:
        return not self._closed.is_set()

    def close(self) -> None:
        self._closed.set()
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


class TelemetryTap:
    """Read-only telemetry subscription; yields telemetry and event messages."""

    def __init__(self, host: str, port: int, connect_timeout: float = 5.0):
        try:
            self._sock = socket.create_connection((host, port), timeout=connect_timeout)
        except OSError as exc:
            raise LinkError(f"cannot connect to {host}:{port}: {exc}") from exc
        self._decoder = wire.StreamDecoder()
        self._queue: list[WireMessage] = []
        self._sock.sendall(wire.encode_message(wire.hello(0, "telemetry")))
        ack = self.read(timeout=connect_timeout)
        if ack is None or ack.msg_type is not MsgType.ACK:
            raise LinkError("telemetry subscription was not acknowledged")
        self.hello_info = ack.payload

    def read(self, timeout: float) -> Optional[WireMessage]:
        """Next message, or None on timeout.  Raises LinkError when closed."""
        if self._queue:
            return self._queue.pop(0)
        self._sock.settimeout(timeout)
        while True:
            try:
                data = self._sock.recv(65536)
            except socket.timeout:
                return None
            except OSError as exc:
                raise LinkError(f"telemetry read failed: {exc}") from exc
            if not data:
                raise LinkError("telemetry connection closed")
            for msg, err in self._decoder.feed(data):
                if err is None:
                    self._queue.append(msg)
            if self._queue:
                return self._queue.pop(0)

    def __iter__(self) -> Iterator[WireMessage]:
        while True:
            msg = self.read(timeout=1.0)
            if msg is not None:
                yield msg

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass
