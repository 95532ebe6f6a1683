import socket
import time

import numpy as np
import pytest

from pullbench import wire
from pullbench.client import CommandRejected, ControlClient, LinkError, TelemetryTap
from pullbench.daemon import Daemon, DaemonConfig, HardwareStubBackend
from pullbench.model import AttachmentKind, TestbedKind
from pullbench.sim import SimParams
from pullbench.wire import MsgType, StreamDecoder


def drawer_config(**overrides) -> DaemonConfig:
    defaults = dict(
        testbed=TestbedKind.DRAWER,
        attachment=AttachmentKind.HANDLE,
        accel=100.0,
        sim_params=SimParams(rng_seed=1, slack_target=50.0),
        partial_frame_timeout=0.15,
    )
    defaults.update(overrides)
    return DaemonConfig(**defaults)


@pytest.fixture
def daemon():
    with Daemon(drawer_config()) as d:
        yield d


def connect(daemon, **kwargs) -> ControlClient:
    return ControlClient("127.0.0.1", daemon.port, **kwargs)


class RawConn:
    """Bare socket speaking raw frames, for protocol-level tests."""

    def __init__(self, port):
        self.sock = socket.create_connection(("127.0.0.1", port), timeout=5.0)
        self.decoder = StreamDecoder()
        self.inbox = []

    def send_bytes(self, data: bytes):
        self.sock.sendall(data)

    def send(self, msg):
        self.send_bytes(wire.encode_message(msg))

    def read(self, timeout=2.0):
        if self.inbox:
            return self.inbox.pop(0)
        self.sock.settimeout(timeout)
        while True:
            data = self.sock.recv(65536)
            if not data:
                raise ConnectionError("closed")
            for msg, err in self.decoder.feed(data):
                if err is None:
                    self.inbox.append(msg)
            if self.inbox:
                return self.inbox.pop(0)

    def close(self):
        self.sock.close()


class TestHandshake:
    def test_hello_ack_reports_identity(self, daemon):
        client = connect(daemon)
        assert client.hello_info["testbed"] == "drawer"
        assert client.hello_info["attachment"] == "handle"
        assert client.hello_info["protocol_version"] == 1
        assert client.hello_info["channel_count"] == 12
        client.close()

    def test_second_control_connection_busy(self, daemon):
        first = connect(daemon)
        with pytest.raises(CommandRejected) as exc:
            connect(daemon)
        assert exc.value.nack.payload["error"] == "busy"
        first.close()

    def test_control_slot_freed_after_disconnect(self, daemon):
        first = connect(daemon)
        first.close()
        time.sleep(0.1)
        second = connect(daemon)
        assert second.hello_info["testbed"] == "drawer"
        second.close()

    def test_command_before_hello_rejected(self, daemon):
        raw = RawConn(daemon.port)
        raw.send(wire.command(1, "reset"))
        reply = raw.read()
        assert reply.msg_type is MsgType.NACK
        assert reply.payload["error"] == "bad_state"
        raw.close()


class TestCommands:
    def test_set_resistance_ack(self, daemon):
        client = connect(daemon)
        reply = client.request("set_resistance", newtons=25.0)
        assert reply.payload["newtons"] == 25.0
        client.close()

    def test_out_of_range_nack_names_max(self, daemon):
        client = connect(daemon)
        with pytest.raises(CommandRejected) as exc:
            client.request("set_resistance", newtons=26.0)
        assert exc.value.nack.payload["error"] == "range"
        assert exc.value.nack.payload["max"] == 25.0
        client.close()

    def test_unknown_command_unsupported(self, daemon):
        client = connect(daemon)
        with pytest.raises(CommandRejected) as exc:
            client.request("frobnicate")
        assert exc.value.nack.payload["error"] == "unsupported"
        client.close()

    def test_malformed_args_nack(self, daemon):
        client = connect(daemon)
        with pytest.raises(CommandRejected) as exc:
            client.request("set_resistance")  # missing newtons
        assert exc.value.nack.payload["error"] == "malformed"
        client.close()

    def test_reset_acks_then_completes(self, daemon):
        client = connect(daemon)
        # open the drawer first by injecting state directly
        daemon.backend.sim._q = 0.2
        client.request("reset")
        evt = client.wait_event("reset_complete", timeout=10.0)
        assert evt.payload["name"] == "reset_complete"
        assert daemon.backend.sim.state.opening <= 5.0
        client.close()

    def test_abort_during_reset_idles_motor(self, daemon):
        client = connect(daemon)
        daemon.backend.sim._q = 0.3
        client.request("reset")
        client.request("abort")
        time.sleep(0.05)
        from pullbench.sim import ResetMotor

        assert daemon.backend.sim.state.reset_motor is ResetMotor.IDLE
        client.close()

    def test_acks_arrive_in_command_order(self, daemon):
        client = connect(daemon)
        for value in [1.0, 2.0, 3.0, 4.0, 5.0]:
            reply = client.request("set_resistance", newtons=value)
            assert reply.payload["newtons"] == value
        client.close()


class TestTelemetry:
    def test_frames_flow_with_increasing_seq(self, daemon):
        tap = TelemetryTap("127.0.0.1", daemon.port)
        seqs = []
        while len(seqs) < 20:
            msg = tap.read(timeout=2.0)
            if msg is not None and msg.msg_type is MsgType.TELEMETRY:
                seqs.append(msg.seq)
        assert all(b > a for a, b in zip(seqs, seqs[1:]))
        tap.close()

    def test_stop_stream_creates_detectable_gap(self, daemon):
        client = connect(daemon)
        tap = TelemetryTap("127.0.0.1", daemon.port)
        before = [tap.read(2.0) for _ in range(5)]
        client.request("stop_stream")
        time.sleep(0.3)
        client.request("start_stream")
        after = None
        deadline = time.time() + 5.0
        while time.time() < deadline:
            msg = tap.read(2.0)
            if msg is not None and msg.msg_type is MsgType.TELEMETRY:
                after = msg
                if after.seq > before[-1].seq + 1:
                    break
        assert after is not None
        assert after.seq > before[-1].seq + 1  # the gap is visible in seq arithmetic
        client.close()
        tap.close()

    def test_record_tagging_window(self, daemon):
        client = connect(daemon)
        tap = TelemetryTap("127.0.0.1", daemon.port)
        client.request("start_record", trial_id="trial-42", metadata={"note": "x"})
        tagged = []
        while len(tagged) < 10:
            msg = tap.read(2.0)
            if msg is not None and msg.msg_type is MsgType.TELEMETRY and msg.payload["trial_id"]:
                tagged.append(msg)
        client.request("stop_record")
        assert all(m.payload["trial_id"] == "trial-42" for m in tagged)
        # after stop_record, tags disappear
        deadline = time.time() + 5.0
        saw_untagged = False
        while time.time() < deadline:
            msg = tap.read(2.0)
            if msg is not None and msg.msg_type is MsgType.TELEMETRY and not msg.payload["trial_id"]:
                saw_untagged = True
                break
        assert saw_untagged
        client.close()
        tap.close()

    def test_multiple_subscribers_see_same_frames(self, daemon):
        tap1 = TelemetryTap("127.0.0.1", daemon.port)
        tap2 = TelemetryTap("127.0.0.1", daemon.port)
        f1 = {}
        f2 = {}
        while len(set(f1) & set(f2)) < 5:
            for tap, store in [(tap1, f1), (tap2, f2)]:
                msg = tap.read(2.0)
                if msg is not None and msg.msg_type is MsgType.TELEMETRY:
                    store[msg.seq] = msg.payload["t"]
        common = set(f1) & set(f2)
        assert all(f1[s] == f2[s] for s in common)
        tap1.close()
        tap2.close()


class TestProtocolRobustness:
    def test_malformed_frame_nacked_next_frame_processed(self, daemon):
        raw = RawConn(daemon.port)
        raw.send(wire.hello(1, "control"))
        assert raw.read().msg_type is MsgType.ACK
        raw.send_bytes(b"\x00\x00\x00\x05np\xffe!")  # valid prefix, junk body
        reply = raw.read()
        assert reply.msg_type is MsgType.NACK
        assert reply.payload["error"] == "malformed"
        raw.send(wire.command(2, "set_resistance", newtons=3.0))
        reply = raw.read()
        assert reply.msg_type is MsgType.ACK and reply.seq == 2
        raw.close()

    def test_truncated_prefix_flushed_after_timeout(self, daemon):
        raw = RawConn(daemon.port)
        raw.send(wire.hello(1, "control"))
        assert raw.read().msg_type is MsgType.ACK
        raw.send_bytes(b"\x00\x00")  # half a length prefix, then silence
        reply = raw.read(timeout=2.0)
        assert reply.msg_type is MsgType.NACK
        assert reply.payload["error"] == "malformed"
        raw.send(wire.command(2, "status"))
        assert raw.read().msg_type is MsgType.ACK
        raw.close()

    def test_fuzz_storm_leaves_daemon_responsive(self):
        rng = np.random.default_rng(17)
        with Daemon(drawer_config(accel=2.0, telemetry_rate=20.0)) as daemon:
            raw = RawConn(daemon.port)
            raw.send(wire.hello(1, "control"))
            assert raw.read().msg_type is MsgType.ACK
            base = wire.encode_message(wire.command(2, "set_resistance", newtons=1.0))
            replies = 0
            for i in range(2000):
                frame = bytearray(base)
                for _ in range(rng.integers(1, 5)):
                    frame[rng.integers(4, len(frame))] = rng.integers(256)  # prefix stays sane
                raw.send_bytes(bytes(frame))
            # every frame earns exactly one reply (ack or nack)
            deadline = time.time() + 20.0
            while replies < 2000 and time.time() < deadline:
                try:
                    if raw.read(timeout=0.5) is not None:
                        replies += 1
                except (TimeoutError, socket.timeout):
                    break
            assert replies == 2000
            raw.close()
            time.sleep(0.1)
            client = connect(daemon)
            assert client.request("status").msg_type is MsgType.ACK
            client.close()


class TestStubBackend:
    def test_stub_serves_closed_frames(self):
        config = drawer_config(backend="hardware_stub")
        with Daemon(config) as daemon:
            assert isinstance(daemon.backend, HardwareStubBackend)
            tap = TelemetryTap("127.0.0.1", daemon.port)
            msg = None
            while msg is None or msg.msg_type is not MsgType.TELEMETRY:
                msg = tap.read(2.0)
            assert msg.payload["opening"] == 0.0
            assert msg.payload["fsr"] == [0] * 12
            tap.close()


class TestBindFailure:
    def test_occupied_port_raises(self):
        placeholder = socket.create_server(("127.0.0.1", 0))
        port = placeholder.getsockname()[1]
        with pytest.raises(OSError):
            Daemon(drawer_config(port=port)).start()
        placeholder.close()
