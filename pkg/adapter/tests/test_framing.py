"""Framing robustness: chunk-agnostic parsing and malformed-stream errors."""

import io

import pytest

from vp_adapter import framing


from conftest import ChunkedReader


def test_round_trip():
    msg = framing.pack_message(framing.MSG_HELLO, b"payload")
    parsed = framing.read_message(io.BytesIO(msg))
    assert parsed == (framing.MSG_HELLO, b"payload")


def test_end_of_stream_is_none():
    assert framing.read_message(io.BytesIO(b"")) is None


@pytest.mark.parametrize("chunk", [1, 2, 3, 7, 11, 64])
def test_arbitrary_chunking_parses_identically(chunk):
    messages = [
        framing.pack_message(framing.MSG_HELLO, b"abc"),
        framing.pack_message(framing.MSG_PREDICT, bytes(range(100))),
        framing.pack_message(framing.MSG_ERROR, b""),
    ]
    reader = ChunkedReader(b"".join(messages), chunk)
    parsed = [framing.read_message(reader) for _ in range(3)]
    assert parsed == [
        (framing.MSG_HELLO, b"abc"),
        (framing.MSG_PREDICT, bytes(range(100))),
        (framing.MSG_ERROR, b""),
    ]
    assert framing.read_message(reader) is None


def test_bad_magic():
    with pytest.raises(framing.FramingError):
        framing.read_message(io.BytesIO(b"XXXX" + bytes(6)))


def test_truncated_header():
    with pytest.raises(framing.FramingError):
        framing.read_message(io.BytesIO(b"VPFM\x01"))


def test_truncated_payload():
    msg = framing.pack_message(framing.MSG_HELLO, b"abcdef")
    with pytest.raises(framing.FramingError):
        framing.read_message(io.BytesIO(msg[:-3]))


def test_oversized_payload_rejected():
    raw = framing.HEADER.pack(framing.MAGIC, 1, 1, framing.MAX_PAYLOAD + 1)
    with pytest.raises(framing.FramingError):
        framing.read_message(io.BytesIO(raw))


def test_unsupported_version():
    raw = framing.HEADER.pack(framing.MAGIC, 7, 1, 0)
    with pytest.raises(framing.FramingError):
        framing.read_message(io.BytesIO(raw))
