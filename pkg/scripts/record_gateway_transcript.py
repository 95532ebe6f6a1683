#!/usr/bin/env python3
"""Record a live gateway session into the console's test fixtures.

Runs a small accelerated campaign with the gateway attached, drives a
console-role connection through the scripted exchanges the frontend tests
replay (hello, abort during pull, out-of-range override, status,
list_trials, get_trial), and writes:

    frontend/test/fixtures/transcript.json   ordered tx/rx frame bytes (base64)
    frontend/test/fixtures/trial.json        one recorded trial, as served

Frames are captured byte-exactly (length prefix + body, one record per
frame). Controls use integer numerics so the console's JSON encoder
reproduces the bytes exactly.
"""

import base64
import json
import socket
import sys
import tempfile
import threading
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from conftest import LiveRig, mini_campaign  # noqa: E402
from pullbench import wire  # noqa: E402
from pullbench.gateway import GatewayServer  # noqa: E402
from pullbench.model import AttachmentKind, CampaignSpec, TestbedKind  # noqa: E402


class Recorder:
    def __init__(self, port: int):
        self.sock = socket.create_connection(("127.0.0.1", port), timeout=10.0)
        self.records: list[dict] = []

    def send(self, label: str, msg: wire.WireMessage) -> None:
        frame = wire.encode_message(msg)
        self.records.append({"dir": "tx", "label": label,
                             "b64": base64.b64encode(frame).decode()})
        self.sock.sendall(frame)

    def _read_exact(self, n: int, timeout: float) -> bytes:
        self.sock.settimeout(timeout)
        chunks = b""
        while len(chunks) < n:
            part = self.sock.recv(n - len(chunks))
            if not part:
                raise ConnectionError("gateway closed")
            chunks += part
        return chunks

    def read_frame(self, timeout: float = 10.0) -> wire.WireMessage:
        prefix = self._read_exact(4, timeout)
        (length,) = wire.LENGTH_PREFIX.unpack(prefix)
        body = self._read_exact(length, timeout)
        self.records.append({"dir": "rx",
                             "b64": base64.b64encode(prefix + body).decode()})
        return wire.decode_body(body)

    def read_until(self, predicate, timeout: float = 60.0) -> wire.WireMessage:
        deadline = time.time() + timeout
        while time.time() < deadline:
            msg = self.read_frame(timeout=max(0.1, deadline - time.time()))
            if predicate(msg):
                return msg
        raise TimeoutError("predicate not satisfied")


def main() -> int:
    fixtures = Path(__file__).resolve().parents[1] / "frontend" / "test" / "fixtures"
    fixtures.mkdir(parents=True, exist_ok=True)

    campaign = CampaignSpec(
        campaign_id="transcript",
        testbed=TestbedKind.DRAWER,
        attachment_grasps={AttachmentKind.HANDLE: ("palm-wrap",)},
        resistances=(0.0,),
        repetitions=2,
        success_threshold=200.0,
    )
    out = Path(tempfile.mkdtemp()) / "campaign"
    rig = LiveRig(campaign, out, seed=21, accel=30.0)
    gateway = GatewayServer(rig.runner)
    gateway.start()
    try:
        rec = Recorder(gateway.port)
        rec.send("hello", wire.hello(1, "console"))
        rec.read_until(lambda m: m.msg_type is wire.MsgType.ACK and m.seq == 1)
        rec.read_until(lambda m: m.msg_type is wire.MsgType.STATUS)

        runner_thread = rig.run_async()

        # wait (observing the stream) until some trial reaches the pull phase
        rec.read_until(lambda m: m.msg_type is wire.MsgType.STATUS
                       and m.payload["phase"] == "pull", timeout=60.0)
        rec.send("abort_current", wire.command(2, "abort_current"))
        rec.read_until(lambda m: m.msg_type in (wire.MsgType.ACK, wire.MsgType.NACK)
                       and m.seq == 2)
        # keep the stream until the aborted trial's done status
        rec.read_until(lambda m: m.msg_type is wire.MsgType.STATUS
                       and m.payload["phase"] == "done", timeout=60.0)
        rig.wait(timeout=90.0)
        rec.read_until(lambda m: m.msg_type is wire.MsgType.STATUS
                       and m.payload["done"], timeout=30.0)

        rec.send("override_26", wire.command(3, "set_resistance_override", newtons=26))
        nack = rec.read_until(lambda m: m.seq == 3 and
                              m.msg_type in (wire.MsgType.ACK, wire.MsgType.NACK))
        assert nack.msg_type is wire.MsgType.NACK and nack.payload["max"] == 25.0

        rec.send("status", wire.command(4, "status"))
        rec.read_until(lambda m: m.seq == 4)

        rec.send("list_trials", wire.command(5, "list_trials"))
        listing = rec.read_until(lambda m: m.seq == 5)
        trial_id = listing.payload["trials"][0]["trial_id"]

        rec.send("get_trial", wire.command(6, "get_trial", trial_id=trial_id))
        served = rec.read_until(lambda m: m.seq == 6, timeout=30.0)
        assert served.msg_type is wire.MsgType.ACK

        (fixtures / "transcript.json").write_text(
            json.dumps({"records": rec.records, "trial_id": trial_id}, indent=1) + "\n",
            encoding="utf-8",
        )
        (fixtures / "trial.json").write_text(
            json.dumps(served.payload, indent=1) + "\n", encoding="utf-8",
        )
        statuses = sum(1 for r in rec.records if r["dir"] == "rx")
        print(f"wrote transcript with {len(rec.records)} records "
              f"({statuses} rx frames), trial {trial_id}")
        return 0
    finally:
        gateway.stop()
        rig.close()


if __name__ == "__main__":
    sys.exit(main())
