import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pullbench import wire
from pullbench.wire import (
    MsgType,
    StreamDecoder,
    WireFormatError,
    WireMessage,
    decode_frame,
    encode_message,
)

json_scalars = st.one_of(
    st.none(),
    st.booleans(),
    st.integers(min_value=-(2**53), max_value=2**53),
    st.floats(allow_nan=False, allow_infinity=False),
    st.text(max_size=40),
)

json_values = st.recursive(
    json_scalars,
    lambda children: st.one_of(
        st.lists(children, max_size=4),
        st.dictionaries(st.text(max_size=10), children, max_size=4),
    ),
    max_leaves=12,
)

messages = st.builds(
    WireMessage,
    msg_type=st.sampled_from(list(MsgType)),
    seq=st.integers(min_value=0, max_value=2**31),
    payload=st.dictionaries(st.text(max_size=10), json_values, max_size=5),
)


class TestRoundTrip:
    @settings(max_examples=300, deadline=None)
    @given(messages)
    def test_encode_decode_identity(self, msg):
        assert decode_frame(encode_message(msg)) == msg

    @settings(max_examples=100, deadline=None)
    @given(messages)
    def test_reencode_is_byte_stable(self, msg):
        frame = encode_message(msg)
        assert encode_message(decode_frame(frame)) == frame


class TestFrameValidation:
    def test_truncated_prefix(self):
        with pytest.raises(WireFormatError, match="truncated"):
            decode_frame(b"\x00\x01")

    def test_length_mismatch(self):
        frame = encode_message(wire.ack(1))
        with pytest.raises(WireFormatError, match="does not match"):
            decode_frame(frame[:-1])

    def test_oversize_length(self):
        with pytest.raises(WireFormatError, match="exceeds maximum"):
            decode_frame(b"\xff\xff\xff\xff" + b"x" * 10)

    def test_non_json_body(self):
        body = b"\x00\x00\x00\x03abc"
        with pytest.raises(WireFormatError, match="not valid JSON"):
            decode_frame(body)

    def test_non_object_body(self):
        body = json.dumps([1, 2]).encode()
        frame = len(body).to_bytes(4, "big") + body
        with pytest.raises(WireFormatError, match="JSON object"):
            decode_frame(frame)

    def test_unknown_type(self):
        body = json.dumps({"type": "bogus", "seq": 1, "payload": {}}).encode()
        frame = len(body).to_bytes(4, "big") + body
        with pytest.raises(WireFormatError, match="unknown"):
            decode_frame(frame)

    def test_bad_seq(self):
        for seq in [-1, "x", None, True]:
            body = json.dumps({"type": "ack", "seq": seq, "payload": {}}).encode()
            frame = len(body).to_bytes(4, "big") + body
            with pytest.raises(WireFormatError, match="seq"):
                decode_frame(frame)


class TestStreamDecoder:
    def test_reassembles_split_frames(self):
        msgs = [wire.command(i, "reset") for i in range(5)]
        stream = b"".join(encode_message(m) for m in msgs)
        decoder = StreamDecoder()
        got = []
        for i in range(0, len(stream), 3):  # drip-feed 3 bytes at a time
            for msg, err in decoder.feed(stream[i : i + 3]):
                assert err is None
                got.append(msg)
        assert got == msgs

    def test_error_then_next_frame_processed(self):
        decoder = StreamDecoder()
        garbage = b"\x00\x00\x00\x03not"
        results = decoder.feed(garbage)
        assert results[0][1] is not None
        results = decoder.feed(encode_message(wire.ack(7)))
        assert results[0][0] == wire.ack(7)

    def test_oversize_drops_buffer(self):
        decoder = StreamDecoder()
        results = decoder.feed(b"\xff\xff\xff\xff" + b"junk")
        assert results[0][1] is not None
        assert decoder.pending_bytes == 0

    def test_flush_partial(self):
        decoder = StreamDecoder()
        assert decoder.flush_partial() is None
        decoder.feed(b"\x00\x00")
        err = decoder.flush_partial()
        assert err is not None and "truncated" in str(err)
        assert decoder.pending_bytes == 0


class TestFuzzSafety:
    def test_mutated_frames_never_crash(self):
        # byte-level mutations of valid frames: decode must either return a
        # message or raise WireFormatError, never anything else
        rng = np.random.default_rng(99)
        base = [
            encode_message(wire.command(5, "set_resistance", newtons=12.5)),
            encode_message(wire.telemetry(10, {"t": 1.0, "fsr": [1, 2, 3]})),
            encode_message(wire.hello(0, "control")),
        ]
        decoded = malformed = 0
        for _ in range(10_000):
            frame = bytearray(base[rng.integers(len(base))])
            for _ in range(rng.integers(1, 4)):
                frame[rng.integers(len(frame))] = rng.integers(256)
            try:
                decode_frame(bytes(frame))
                decoded += 1
            except WireFormatError:
                malformed += 1
        assert decoded + malformed == 10_000
        assert malformed > 0
