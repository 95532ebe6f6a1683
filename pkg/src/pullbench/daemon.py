"""Device daemon: owns one testbed backend, executes commands, streams telemetry.

One control connection at a time (commands, acks, events) plus any number of
telemetry subscribers.  The clock thread advances the backend at the
configured rate (wall time / accel) and emits one telemetry frame per tick.
"""

from __future__ import annotations

import logging
import math
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Optional, Protocol

from . import wire
from .model import AttachmentKind, ResistanceRangeError, TestbedKind, standard_attachment
from .sim import FIXED_STEP_S, GripContact, SimParams, SimStateError, TestbedSim
from .wire import MsgType, NackError, WireFormatError, WireMessage

log = logging.getLogger(__name__)


class BackendInitError(RuntimeError):
    pass


class PullSource(Protocol):
    """Physically coupled actor (e.g. a scripted arm) driven by the clock loop."""

    current_grip: Optional[GripContact]

    def tick(self, sim: TestbedSim, dt: float) -> None: ...


@dataclass
class DaemonConfig:
    testbed: TestbedKind
    attachment: AttachmentKind
    host: str = "127.0.0.1"
    port: int = 0                      # 0 = ephemeral
    telemetry_rate: float = 100.0      # Hz
    backend: str = "sim"               # "sim" | "hardware_stub"
    accel: float = 1.0                 # sim seconds per wall second; <=0 = flat out
    sim_params: SimParams = field(default_factory=SimParams)
    partial_frame_timeout: float = 0.25

    def __post_init__(self) -> None:
        if not 10.0 <= self.telemetry_rate <= 200.0:
            raise ValueError("telemetry_rate must be within 10..200 Hz")


class SimBackend:
    """Simulator-backed testbed; the actor hook applies grip and pull forces."""

    def __init__(self, config: DaemonConfig):
        self.sim = TestbedSim(config.testbed, config.attachment, config.sim_params)
        self.actor: Optional[PullSource] = None

    @property
    def testbed(self) -> TestbedKind:
        return self.sim.testbed

    @property
    def attachment_kind(self) -> AttachmentKind:
        return self.sim.attachment.kind

    @property
    def channel_count(self) -> int:
        return self.sim.attachment.channel_count

    def attach_actor(self, actor: Optional[PullSource]) -> None:
        self.actor = actor

    def set_attachment(self, kind: AttachmentKind) -> None:
        self.sim.attachment = standard_attachment(kind)

    def advance(self, dt: float) -> None:
        steps = max(1, round(dt / FIXED_STEP_S))
        for _ in range(steps):
            if self.actor is not None:
                self.actor.tick(self.sim, FIXED_STEP_S)
            else:
                self.sim.step(0.0, FIXED_STEP_S)

    def sense_payload(self) -> dict:
        grip = self.actor.current_grip if self.actor is not None else None
        frame = self.sim.sense(grip)
        return {
            "t": frame.timestamp,
            "frame_seq": frame.seq,
            "opening": frame.opening,
            "opening_measured": frame.opening_measured,
            "velocity": frame.velocity,
            "fsr": list(frame.fsr_counts),
            "resistance": frame.resistance_setting,
            "reset_motor": frame.reset_motor.value,
            "flags": frame.flags,
        }

    def set_resistance(self, value: float) -> None:
        self.sim.set_resistance(value)

    def begin_reset(self) -> None:
        self.sim.begin_reset()

    def begin_release_slack(self) -> None:
        self.sim.begin_release_slack()

    def abort(self) -> None:
        self.sim.abort()

    def clear_fault(self) -> None:
        self.sim.clear_fault()

    def pop_events(self) -> list[dict]:
        return self.sim.pop_events()


class HardwareStubBackend:
    """Placeholder for real drivers: tracks settings, physics-free.

    Real GPIO/SPI/I2C integrations implement the same method surface as
    SimBackend; this stub answers commands and emits closed/idle frames so
    integration wiring can be exercised without hardware.
    """

    def __init__(self, config: DaemonConfig):
        self.testbed = config.testbed
        self._attachment = standard_attachment(config.attachment)
        self._setting = 0.0
        self._clock = 0.0
        self._seq = 0
        self._events: list[dict] = []

    @property
    def attachment_kind(self) -> AttachmentKind:
        return self._attachment.kind

    @property
    def channel_count(self) -> int:
        return self._attachment.channel_count

    def attach_actor(self, actor) -> None:
        raise BackendInitError("hardware stub cannot host a simulated actor")

    def set_attachment(self, kind: AttachmentKind) -> None:
        raise SimStateError("attachment swaps require physical intervention")

    def advance(self, dt: float) -> None:
        self._clock += dt

    def sense_payload(self) -> dict:
        payload = {
            "t": self._clock,
            "frame_seq": self._seq,
            "opening": 0.0,
            "opening_measured": 0.0,
            "velocity": 0.0,
            "fsr": [0] * self.channel_count,
            "resistance": self._setting,
            "reset_motor": "idle",
            "flags": 0,
        }
        self._seq += 1
        return payload

    def set_resistance(self, value: float) -> None:
        from .model import validate_resistance

        validate_resistance(self.testbed, value)
        self._setting = value

    def begin_reset(self) -> None:
        self._events.append({"name": "reset_complete"})

    def begin_release_slack(self) -> None:
        self._events.append({"name": "slack_ready"})

    def abort(self) -> None:
        pass

    def clear_fault(self) -> None:
        pass

    def pop_events(self) -> list[dict]:
        events, self._events = self._events, []
        return events


def make_backend(config: DaemonConfig):
    if config.backend == "sim":
        return SimBackend(config)
    if config.backend == "hardware_stub":
        return HardwareStubBackend(config)
    raise BackendInitError(f"unknown backend {config.backend!r}")


class _Connection:
    def __init__(self, sock: socket.socket, role: str):
        self.sock = sock
        self.role = role
        self.send_lock = threading.Lock()
        self.alive = True

    def send(self, msg: WireMessage) -> bool:
        try:
            with self.send_lock:
                self.sock.sendall(wire.encode_message(msg))
            return True
        except OSError:
            self.alive = False
            return False


class Daemon:
    """Serves one testbed.  start() binds and spawns threads; stop() tears down."""

    def __init__(self, config: DaemonConfig, backend=None):
        self.config = config
        self.backend = backend if backend is not None else make_backend(config)
        self._listener: Optional[socket.socket] = None
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()
        self._backend_lock = threading.Lock()
        self._control: Optional[_Connection] = None
        self._control_lock = threading.Lock()
        self._subscribers: list[_Connection] = []
        self._subscribers_lock = threading.Lock()
        self._streaming = True
        self._recording_trial: Optional[str] = None
        self._event_seq = 0
        self.port: Optional[int] = None

    # ------------------------------------------------------------------
    def start(self) -> None:
        try:
            self._listener = socket.create_server(
                (self.config.host, self.config.port), reuse_port=False
            )
        except OSError as exc:
            raise OSError(f"cannot bind {self.config.host}:{self.config.port}: {exc}") from exc
        self._listener.settimeout(0.2)
        self.port = self._listener.getsockname()[1]
        for target in (self._accept_loop, self._clock_loop):
            thread = threading.Thread(target=target, daemon=True, name=target.__name__)
            thread.start()
            self._threads.append(thread)
        log.info("daemon serving %s/%s on port %d",
                 self.config.testbed.value, self.config.attachment.value, self.port)

    def stop(self) -> None:
        self._stop.set()
        if self._listener is not None:
            self._listener.close()
        with self._subscribers_lock:
            conns = list(self._subscribers)
        if self._control is not None:
            conns.append(self._control)
        for conn in conns:
            try:
                conn.sock.close()
            except OSError:
                pass
        for thread in self._threads:
            thread.join(timeout=2.0)

    def __enter__(self) -> "Daemon":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    # ------------------------------------------------------------------
    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                sock, _addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            thread = threading.Thread(target=self._serve_connection, args=(sock,), daemon=True)
            thread.start()

    def _serve_connection(self, sock: socket.socket) -> None:
        sock.settimeout(self.config.partial_frame_timeout)
        decoder = wire.StreamDecoder()
        conn = _Connection(sock, role="pending")
        try:
            while not self._stop.is_set() and conn.alive:
                try:
                    data = sock.recv(65536)
                except socket.timeout:
                    err = decoder.flush_partial()
                    if err is not None:
                        conn.send(wire.nack(0, NackError.MALFORMED, str(err)))
                    continue
                except OSError:
                    break
                if not data:
                    break
                for msg, err in decoder.feed(data):
                    if err is not None:
                        conn.send(wire.nack(0, NackError.MALFORMED, str(err)))
                        continue
                    self._dispatch(conn, msg)
        finally:
            self._drop_connection(conn)
            try:
                sock.close()
            except OSError:
                pass

    def _drop_connection(self, conn: _Connection) -> None:
        conn.alive = False
        with self._control_lock:
            if self._control is conn:
                self._control = None
        with self._subscribers_lock:
            if conn in self._subscribers:
                self._subscribers.remove(conn)

    # ------------------------------------------------------------------
    def _dispatch(self, conn: _Connection, msg: WireMessage) -> None:
        if conn.role == "pending":
            if msg.msg_type is not MsgType.HELLO:
                conn.send(wire.nack(msg.seq, NackError.BAD_STATE, "expected hello first"))
                return
            role = msg.payload.get("role")
            if role == "control":
                with self._control_lock:
                    if self._control is not None and self._control.alive:
                        conn.send(wire.nack(msg.seq, NackError.BUSY,
                                            "another control connection is active"))
                        conn.alive = False
                        return
                    self._control = conn
            elif role == "telemetry":
                with self._subscribers_lock:
                    self._subscribers.append(conn)
            else:
                conn.send(wire.nack(msg.seq, NackError.MALFORMED, f"unknown role {role!r}"))
                return
            conn.role = role
            conn.send(wire.ack(
                msg.seq,
                testbed=self.backend.testbed.value,
                attachment=self.backend.attachment_kind.value,
                protocol_version=wire.PROTOCOL_VERSION,
                channel_count=self.backend.channel_count,
                telemetry_rate=self.config.telemetry_rate,
            ))
            return

        if msg.msg_type is MsgType.COMMAND and conn.role == "control":
            conn.send(self._execute(msg))
        elif msg.msg_type is MsgType.COMMAND:
            conn.send(wire.nack(msg.seq, NackError.BAD_STATE,
                                "commands require the control role"))
        else:
            conn.send(wire.nack(msg.seq, NackError.UNSUPPORTED,
                                f"unexpected message type {msg.msg_type.value!r}"))

    def _execute(self, msg: WireMessage) -> WireMessage:
        name = msg.payload.get("name")
        args = msg.payload.get("args", {})
        if not isinstance(args, dict):
            return wire.nack(msg.seq, NackError.MALFORMED, "args must be an object")
        handler = getattr(self, f"_cmd_{name}", None) if isinstance(name, str) else None
        if handler is None:
            return wire.nack(msg.seq, NackError.UNSUPPORTED, f"unknown command {name!r}")
        try:
            with self._backend_lock:
                payload = handler(args) or {}
            return wire.ack(msg.seq, **payload)
        except ResistanceRangeError as exc:
            return wire.nack(msg.seq, NackError.RANGE, str(exc), max=exc.maximum)
        except SimStateError as exc:
            return wire.nack(msg.seq, NackError.BAD_STATE, str(exc))
        except (TypeError, ValueError, KeyError) as exc:
            return wire.nack(msg.seq, NackError.MALFORMED, f"bad arguments: {exc}")

    # command handlers: one per protocol command ------------------------
    def _cmd_set_resistance(self, args: dict) -> dict:
        self.backend.set_resistance(float(args["newtons"]))
        return {"newtons": float(args["newtons"])}

    def _cmd_reset(self, args: dict) -> dict:
        self.backend.begin_reset()
        return {}

    def _cmd_release_slack(self, args: dict) -> dict:
        self.backend.begin_release_slack()
        return {}

    def _cmd_start_stream(self, args: dict) -> dict:
        self._streaming = True
        return {}

    def _cmd_stop_stream(self, args: dict) -> dict:
        self._streaming = False
        return {}

    def _cmd_start_record(self, args: dict) -> dict:
        trial_id = args["trial_id"]
        if not isinstance(trial_id, str) or not trial_id:
            raise ValueError("trial_id must be a non-empty string")
        self._recording_trial = trial_id
        return {"trial_id": trial_id}

    def _cmd_stop_record(self, args: dict) -> dict:
        self._recording_trial = None
        return {}

    def _cmd_abort(self, args: dict) -> dict:
        self.backend.abort()
        return {}

    def _cmd_clear_fault(self, args: dict) -> dict:
        self.backend.clear_fault()
        return {}

    def _cmd_set_attachment(self, args: dict) -> dict:
        kind = AttachmentKind(args["attachment"])
        self.backend.set_attachment(kind)
        return {"attachment": kind.value}

    def _cmd_status(self, args: dict) -> dict:
        return {
            "streaming": self._streaming,
            "recording_trial": self._recording_trial,
            "testbed": self.backend.testbed.value,
            "attachment": self.backend.attachment_kind.value,
        }

    # ------------------------------------------------------------------
    def _clock_loop(self) -> None:
        tick_dt = 1.0 / self.config.telemetry_rate
        accel = self.config.accel
        start = time.monotonic()
        tick = 0
        while not self._stop.is_set():
            with self._backend_lock:
                self.backend.advance(tick_dt)
                payload = self.backend.sense_payload()
                payload["trial_id"] = self._recording_trial
                events = self.backend.pop_events()
                streaming = self._streaming
            if streaming:
                self._broadcast(wire.telemetry(payload["frame_seq"], payload))
            for evt in events:
                self._emit_event(evt)
            tick += 1
            if accel > 0.0:
                next_wall = start + tick * tick_dt / accel
                delay = next_wall - time.monotonic()
                if delay > 0.0:
                    time.sleep(delay)

    def _broadcast(self, msg: WireMessage) -> None:
        with self._subscribers_lock:
            subscribers = list(self._subscribers)
        dead = [conn for conn in subscribers if not conn.send(msg)]
        if dead:
            with self._subscribers_lock:
                for conn in dead:
                    if conn in self._subscribers:
                        self._subscribers.remove(conn)

    def _emit_event(self, payload: dict) -> None:
        self._event_seq += 1
        msg = wire.event(self._event_seq, payload.pop("name"), **payload)
        control = self._control
        if control is not None:
            control.send(msg)
        self._broadcast(msg)
