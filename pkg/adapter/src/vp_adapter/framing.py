"""Message framing for the prediction protocol.

Every message is: magic "VPFM" | u8 version=1 | u8 msg_type | u32 LE payload
length | payload.  Reads are chunk-agnostic: any byte-level splitting of the
stream parses identically.
"""

import json
import struct

MAGIC = b"VPFM"
VERSION = 1

MSG_HELLO = 1
MSG_HELLO_ACK = 2
MSG_PREDICT = 3
MSG_PREDICT_RESPONSE = 4
MSG_ERROR = 5

ERR_BAD_REQUEST = 1
ERR_INTERNAL = 2
ERR_UNSUPPORTED_SHAPE = 3

HEADER = struct.Struct("<4sBBI")

# Well beyond any sane request at 64x64 resolution; bigger payloads are
# rejected rather than buffered.
MAX_PAYLOAD = 1 << 30


class FramingError(Exception):
    """The byte stream does not follow the protocol framing."""


def encode_json(obj: dict) -> bytes:
    """Canonical JSON (sorted keys, no whitespace) so responses are
    byte-stable for the golden transcripts."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def pack_message(msg_type: int, payload: bytes) -> bytes:
    return HEADER.pack(MAGIC, VERSION, msg_type, len(payload)) + payload


def pack_error(code: int, message: str) -> bytes:
    data = message.encode("utf-8")
    return pack_message(MSG_ERROR, struct.pack("<II", code, len(data)) + data)


def read_exact(stream, n: int) -> bytes | None:
    """Read exactly n bytes; None on clean end-of-stream at a message
    boundary, FramingError on truncation mid-read."""
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            if remaining == n:
                return None
            raise FramingError("stream truncated mid-message")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_message(stream) -> tuple[int, bytes] | None:
    """Parse one framed message; None at clean end-of-stream."""
    raw = read_exact(stream, HEADER.size)
    if raw is None:
        return None
    magic, version, msg_type, length = HEADER.unpack(raw)
    if magic != MAGIC:
        raise FramingError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FramingError(f"unsupported version {version}")
    if length > MAX_PAYLOAD:
        raise FramingError(f"payload of {length} bytes exceeds the cap")
    payload = read_exact(stream, length) if length else b""
    if payload is None and length:
        raise FramingError("stream truncated before payload")
    return msg_type, payload
