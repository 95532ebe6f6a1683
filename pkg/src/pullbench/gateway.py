"""Monitoring/control gateway for operator consoles.

Same framing as the device protocol.  Consoles subscribe with a hello and
receive status snapshots, decimated live telemetry, manipulator feedback
events, and command acks/nacks for the operator controls.  Recorded trials
are served read-only so remote consoles never need file access.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from pathlib import Path
from typing import Optional

from . import wire
from .client import CommandRejected, LinkError
from .dataset import read_trial
from .model import ResistanceRangeError, validate_resistance
from .orchestrator import CampaignRunner, TrialPhase
from .wire import MsgType, NackError, WireMessage

log = logging.getLogger(__name__)

LIVE_RATE_HZ = 20.0
ACTIVE_PHASES = {
    TrialPhase.SETUP, TrialPhase.SLACK_OUT, TrialPhase.ARM_APPROACH,
    TrialPhase.GRASP, TrialPhase.PULL, TrialPhase.EVALUATE,
    TrialPhase.RESETTING, TrialPhase.VERIFY_CLOSED, TrialPhase.ABORTING,
}


class GatewayServer:
    def __init__(self, runner: CampaignRunner, host: str = "127.0.0.1", port: int = 0):
        self.runner = runner
        self.host = host
        self.port: Optional[int] = None
        self._config_port = port
        self._listener: Optional[socket.socket] = None
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()
        self._consoles: list = []
        self._consoles_lock = threading.Lock()
        self._status_seq = 0
        self._event_seq = 0
        self._last_frame_sent = 0.0
        self._last_feedback_sent = 0.0

    def start(self) -> None:
        self._listener = socket.create_server((self.host, self._config_port))
        self._listener.settimeout(0.2)
        self.port = self._listener.getsockname()[1]
        thread = threading.Thread(target=self._accept_loop, daemon=True)
        thread.start()
        self._threads.append(thread)
        self.runner.add_status_listener(self._on_status)
        self.runner.session.frame_listener = self._on_frame
        self.runner.feedback_listener = self._on_feedback
        log.info("gateway on port %d", self.port)

    def stop(self) -> None:
        self._stop.set()
        if self._listener is not None:
            self._listener.close()
        with self._consoles_lock:
            for conn in self._consoles:
                try:
                    conn.sock.close()
                except OSError:
                    pass
        for thread in self._threads:
            thread.join(timeout=2.0)

    def __enter__(self) -> "GatewayServer":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    # ------------------------------------------------------------------
    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                sock, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            threading.Thread(target=self._serve, args=(sock,), daemon=True).start()

    def _serve(self, sock: socket.socket) -> None:
        from .daemon import _Connection

        sock.settimeout(0.25)
        conn = _Connection(sock, role="pending")
        decoder = wire.StreamDecoder()
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
            with self._consoles_lock:
                if conn in self._consoles:
                    self._consoles.remove(conn)
            try:
                sock.close()
            except OSError:
                pass

    def _dispatch(self, conn, msg: WireMessage) -> None:
        if conn.role == "pending":
            if msg.msg_type is not MsgType.HELLO:
                conn.send(wire.nack(msg.seq, NackError.BAD_STATE, "expected hello first"))
                return
            conn.role = "console"
            conn.send(wire.ack(msg.seq, protocol_version=wire.PROTOCOL_VERSION,
                               campaign_id=self.runner.campaign.campaign_id))
            # snapshot so a reconnecting console renders current state at once
            conn.send(WireMessage(MsgType.STATUS, self._next_status_seq(), self.runner.status()))
            with self._consoles_lock:
                self._consoles.append(conn)
            return
        if msg.msg_type is MsgType.COMMAND:
            conn.send(self._control(msg))
        else:
            conn.send(wire.nack(msg.seq, NackError.UNSUPPORTED,
                                f"unexpected message type {msg.msg_type.value!r}"))

    # ------------------------------------------------------------------
    def _control(self, msg: WireMessage) -> WireMessage:
        name = msg.payload.get("name")
        args = msg.payload.get("args", {})
        if not isinstance(args, dict):
            return wire.nack(msg.seq, NackError.MALFORMED, "args must be an object")
        if self.runner.faulted and name not in ("clear_fault", "reset", "status"):
            return wire.nack(msg.seq, NackError.FAULT,
                             f"campaign faulted ({self.runner.status()['fault']}); "
                             f"only clear_fault and reset are accepted")
        try:
            if name == "pause_after_trial":
                self.runner.pause_after_trial()
                return wire.ack(msg.seq, paused=True)
            if name == "resume":
                self.runner.resume()
                return wire.ack(msg.seq, paused=False)
            if name == "abort_current":
                if self.runner.phase not in ACTIVE_PHASES:
                    return wire.nack(msg.seq, NackError.BAD_STATE, "no trial is running")
                self.runner.request_abort_current()
                return wire.ack(msg.seq)
            if name == "set_resistance_override":
                newtons = float(args["newtons"])
                try:
                    self.runner.override_next_resistance(newtons)
                except ResistanceRangeError as exc:
                    return wire.nack(msg.seq, NackError.RANGE, str(exc), max=exc.maximum)
                return wire.ack(msg.seq, newtons=newtons)
            if name == "clear_fault":
                self.runner.session.command("clear_fault")
                return wire.ack(msg.seq)
            if name == "reset":
                if self.runner.faulted:
                    threading.Thread(target=self._recover, daemon=True).start()
                    return wire.ack(msg.seq, recovery="started")
                if self.runner.phase in ACTIVE_PHASES:
                    return wire.nack(msg.seq, NackError.BAD_STATE,
                                     "cannot reset while a trial is running")
                self.runner.session.command("reset")
                return wire.ack(msg.seq)
            if name == "status":
                return wire.ack(msg.seq, **self.runner.status())
            if name == "list_trials":
                return wire.ack(msg.seq, trials=self._list_trials())
            if name == "get_trial":
                return self._get_trial(msg.seq, str(args["trial_id"]))
        except (CommandRejected, LinkError) as exc:
            return wire.nack(msg.seq, NackError.BAD_STATE, str(exc))
        except (KeyError, TypeError, ValueError) as exc:
            return wire.nack(msg.seq, NackError.MALFORMED, f"bad arguments: {exc}")
        return wire.nack(msg.seq, NackError.UNSUPPORTED, f"unknown control {name!r}")

    def _recover(self) -> None:
        try:
            self.runner.recover()
        except Exception as exc:
            log.error("recovery failed: %s", exc)

    def _list_trials(self) -> list[dict]:
        manifest_path = Path(self.runner.out_dir) / "manifest.json"
        if not manifest_path.exists():
            return []
        import json

        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        return [
            {"trial_id": e["trial_id"], "result": e["result"]}
            for e in manifest.get("trials", [])
        ]

    def _get_trial(self, seq: int, trial_id: str) -> WireMessage:
        trial_dir = Path(self.runner.out_dir) / "trials" / trial_id
        if not trial_dir.exists():
            return wire.nack(seq, NackError.BAD_STATE, f"no trial {trial_id!r}")
        record = read_trial(trial_dir)
        return wire.ack(
            seq,
            meta=record.meta,
            testbed=[list(r) for r in record.testbed_rows],
            fsr=[list(r) for r in record.fsr_rows],
            manipulator=[list(r) for r in record.manipulator_rows],
        )

    # ------------------------------------------------------------------
    def _next_status_seq(self) -> int:
        self._status_seq += 1
        return self._status_seq

    def _broadcast(self, msg: WireMessage) -> None:
        with self._consoles_lock:
            consoles = list(self._consoles)
        for conn in consoles:
            if not conn.send(msg):
                with self._consoles_lock:
                    if conn in self._consoles:
                        self._consoles.remove(conn)

    def _on_status(self, snapshot: dict) -> None:
        self._broadcast(WireMessage(MsgType.STATUS, self._next_status_seq(), snapshot))

    def _on_frame(self, payload: dict) -> None:
        now = time.monotonic()
        if now - self._last_frame_sent < 1.0 / LIVE_RATE_HZ:
            return
        self._last_frame_sent = now
        self._broadcast(wire.telemetry(payload["frame_seq"], payload))

    def _on_feedback(self, sample: tuple) -> None:
        now = time.monotonic()
        if now - self._last_feedback_sent < 1.0 / LIVE_RATE_HZ:
            return
        self._last_feedback_sent = now
        t, q, qd = sample
        self._event_seq += 1
        self._broadcast(wire.event(self._event_seq, "manip_feedback", t=t, q=q, qd=qd))
