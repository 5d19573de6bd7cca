"""Binary prediction wire protocol: framing, the engine-side client, and a
loopback oracle server for conformance and determinism testing.

Every message is: magic "VPFM" | u8 version=1 | u8 msg_type | u32 LE payload
length | payload.  The same framing runs over a spawned subprocess's standard
streams or a TCP connection.
"""

import json
import select
import shlex
import socket
import struct
import subprocess
import threading
import time

import numpy as np

from .errors import ProtocolError, RemoteModelError
from . import world as w
from .models import (
    HiddenStateToken,
    OracleModel,
    PredictionRequest,
    PredictionResponse,
)

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

_HEADER = struct.Struct("<4sBBI")
DEFAULT_TIMEOUT = 30.0
MAX_PAYLOAD = 1 << 30


def encode_json(obj: dict) -> bytes:
    """Canonical JSON encoding (sorted keys, no spaces) shared with the
    golden conformance transcripts."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def pack_message(msg_type: int, payload: bytes) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, msg_type, len(payload)) + payload


def parse_header(raw: bytes) -> tuple[int, int]:
    magic, version, msg_type, length = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise ProtocolError(f"bad message magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"payload length {length} exceeds the sanity cap")
    return msg_type, length


def hello_payload(
    context_len: int, horizon: int, height: int, width: int, channels: int, action_dim: int
) -> bytes:
    return encode_json(
        {
            "context_frames": context_len,
            "horizon": horizon,
            "height": height,
            "width": width,
            "channels": channels,
            "action_dim": action_dim,
        }
    )


def pack_predict(request: PredictionRequest) -> bytes:
    t_c, h, width, c = request.context_frames.shape
    b = request.batch
    a = request.action_dim
    head = struct.pack("<7I", b, t_c, request.horizon, h, width, c, a)
    return head + request.context_frames.astype("<f4").tobytes() + request.actions.astype(
        "<f4"
    ).tobytes()


def unpack_predict(payload: bytes) -> tuple[np.ndarray, np.ndarray, int]:
    """-> (context [T_c,H,W,C], actions [B,T,A], horizon)"""
    if len(payload) < 28:
        raise ProtocolError("PREDICT payload too short")
    b, t_c, horizon, h, width, c, a = struct.unpack("<7I", payload[:28])
    ctx_n = t_c * h * width * c
    act_n = b * (t_c - 1 + horizon) * a
    expected = 28 + 4 * (ctx_n + act_n)
    if len(payload) != expected:
        raise ProtocolError(
            f"PREDICT payload length {len(payload)} != expected {expected}"
        )
    context = np.frombuffer(payload, dtype="<f4", count=ctx_n, offset=28).reshape(
        t_c, h, width, c
    )
    actions = np.frombuffer(
        payload, dtype="<f4", count=act_n, offset=28 + 4 * ctx_n
    ).reshape(b, t_c - 1 + horizon, a)
    return context, actions, horizon


def pack_predict_response(frames: np.ndarray) -> bytes:
    b, horizon, h, width, c = frames.shape
    head = struct.pack("<5I", b, horizon, h, width, c)
    return head + frames.astype("<f4").tobytes()


def unpack_predict_response(payload: bytes) -> np.ndarray:
    if len(payload) < 20:
        raise ProtocolError("PREDICT_RESPONSE payload too short")
    b, horizon, h, width, c = struct.unpack("<5I", payload[:20])
    n = b * horizon * h * width * c
    if len(payload) != 20 + 4 * n:
        raise ProtocolError("PREDICT_RESPONSE payload length mismatch")
    return np.frombuffer(payload, dtype="<f4", count=n, offset=20).reshape(
        b, horizon, h, width, c
    )


def pack_error(code: int, message: str) -> bytes:
    data = message.encode("utf-8")
    return struct.pack("<II", code, len(data)) + data


def unpack_error(payload: bytes) -> tuple[int, str]:
    if len(payload) < 8:
        raise ProtocolError("ERROR payload too short")
    code, length = struct.unpack("<II", payload[:8])
    return code, payload[8 : 8 + length].decode("utf-8", errors="replace")


# ---------------------------------------------------------------------------
# Transports


class TcpTransport:
    def __init__(self, host: str, port: int, timeout: float = DEFAULT_TIMEOUT):
        self.timeout = timeout
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise RemoteModelError(f"cannot connect to {host}:{port}: {exc}") from exc
        self.sock.settimeout(timeout)

    def send(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise RemoteModelError(f"transport send failed: {exc}") from exc

    def recv_exact(self, n: int) -> bytes:
        chunks = []
        remaining = n
        try:
            while remaining:
                chunk = self.sock.recv(min(remaining, 1 << 20))
                if not chunk:
                    raise RemoteModelError("connection closed mid-message")
                chunks.append(chunk)
                remaining -= len(chunk)
        except socket.timeout as exc:
            raise RemoteModelError("transport read timed out") from exc
        except OSError as exc:
            raise RemoteModelError(f"transport read failed: {exc}") from exc
        return b"".join(chunks)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class SubprocessTransport:
    """Model server spawned as a child process, framed over its stdio."""

    GRACE_SECONDS = 5.0

    def __init__(self, command, timeout: float = DEFAULT_TIMEOUT, env: dict | None = None):
        if isinstance(command, str):
            command = shlex.split(command)
        self.timeout = timeout
        try:
            self.proc = subprocess.Popen(
                command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                env=env,
            )
        except OSError as exc:
            raise RemoteModelError(f"cannot spawn model server: {exc}") from exc

    def send(self, data: bytes) -> None:
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise RemoteModelError(f"transport send failed: {exc}") from exc

    def recv_exact(self, n: int) -> bytes:
        fd = self.proc.stdout.fileno()
        chunks = []
        remaining = n
        deadline = time.monotonic() + self.timeout
        while remaining:
            wait = deadline - time.monotonic()
            if wait <= 0:
                raise RemoteModelError("transport read timed out")
            ready, _, _ = select.select([fd], [], [], wait)
            if not ready:
                continue
            chunk = self.proc.stdout.read1(min(remaining, 1 << 20))
            if not chunk:
                raise RemoteModelError("model server closed its output stream")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        try:
            if self.proc.stdin:
                self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=self.GRACE_SECONDS)
        except subprocess.TimeoutExpired:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=self.GRACE_SECONDS)
            except subprocess.TimeoutExpired:
                self.proc.kill()


# ---------------------------------------------------------------------------
# Engine-side remote model


class RemoteModel:
    """Client for an out-of-process forward model.

    Handshakes on construction; oversized batches are split to the server's
    advertised max batch and the responses concatenated in order.  One
    request is in flight at a time.
    """

    kind = "remote"
    requires_state = False

    def __init__(
        self,
        transport,
        context_len: int = 2,
        horizon: int = 10,
        height: int = 64,
        width: int = 64,
        channels: int = 3,
        action_dim: int = 2,
    ):
        self.transport = transport
        self.signature = (height, width, channels, action_dim, context_len)
        self.horizon = horizon
        self._lock = threading.Lock()
        self.transport.send(
            pack_message(
                MSG_HELLO,
                hello_payload(context_len, horizon, height, width, channels, action_dim),
            )
        )
        msg_type, payload = self._read_message()
        if msg_type == MSG_ERROR:
            code, message = unpack_error(payload)
            raise RemoteModelError(f"server rejected HELLO: {message}", code=code)
        if msg_type != MSG_HELLO_ACK:
            raise ProtocolError(f"expected HELLO_ACK, got message type {msg_type}")
        try:
            ack = json.loads(payload.decode("utf-8"))
            self.name = str(ack["model_name"])
            self.max_batch = int(ack["max_batch"])
        except (ValueError, KeyError) as exc:
            raise ProtocolError(f"malformed HELLO_ACK payload: {exc}") from exc
        if self.max_batch < 1:
            raise ProtocolError(f"server advertised max_batch {self.max_batch}")

    @classmethod
    def from_command(cls, command, env: dict | None = None, timeout: float = DEFAULT_TIMEOUT, **shape):
        return cls(SubprocessTransport(command, timeout=timeout, env=env), **shape)

    @classmethod
    def from_address(cls, host: str, port: int, timeout: float = DEFAULT_TIMEOUT, **shape):
        return cls(TcpTransport(host, port, timeout=timeout), **shape)

    def _read_message(self) -> tuple[int, bytes]:
        header = self.transport.recv_exact(_HEADER.size)
        msg_type, length = parse_header(header)
        payload = self.transport.recv_exact(length) if length else b""
        return msg_type, payload

    def predict(
        self, request: PredictionRequest, token: HiddenStateToken | None = None
    ) -> PredictionResponse:
        del token  # remote models see frames and actions only
        with self._lock:
            pieces = []
            for start in range(0, request.batch, self.max_batch):
                chunk = PredictionRequest(
                    request.context_frames,
                    request.actions[start : start + self.max_batch],
                    request.horizon,
                )
                self.transport.send(pack_message(MSG_PREDICT, pack_predict(chunk)))
                msg_type, payload = self._read_message()
                if msg_type == MSG_ERROR:
                    code, message = unpack_error(payload)
                    raise RemoteModelError(
                        f"model error {code}: {message}", code=code
                    )
                if msg_type != MSG_PREDICT_RESPONSE:
                    raise ProtocolError(
                        f"expected PREDICT_RESPONSE, got message type {msg_type}"
                    )
                frames = unpack_predict_response(payload)
                if frames.shape[0] != chunk.batch or frames.shape[1] != request.horizon:
                    raise ProtocolError(
                        f"response shape {frames.shape} does not match the request"
                    )
                pieces.append(frames)
        frames = pieces[0] if len(pieces) == 1 else np.concatenate(pieces, axis=0)
        if not np.all(np.isfinite(frames)):
            raise ProtocolError("remote model returned non-finite values")
        return PredictionResponse(np.clip(frames, 0.0, 1.0))

    def close(self) -> None:
        self.transport.close()


# ---------------------------------------------------------------------------
# Loopback oracle server (engine-side test utility)


class LoopbackOracleServer:
    """Serves the in-process oracle over real TCP framing.

    Exists to prove remote transparency: a planner talking to this server
    must make bit-identical decisions to one holding the oracle directly.
    The hidden state never crosses the wire; the server holds its own
    reference via ``state_provider``.
    """

    def __init__(self, config: w.WorldConfig, state_provider, max_batch: int = 64):
        self.config = config
        self.state_provider = state_provider
        self.max_batch = max_batch
        self.oracle = OracleModel(config)
        self.listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.listener.bind(("127.0.0.1", 0))
        self.listener.listen(1)
        self.port = self.listener.getsockname()[1]
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()

    def _serve(self) -> None:
        try:
            conn, _ = self.listener.accept()
        except OSError:
            return
        with conn:
            try:
                while True:
                    header = self._recv_exact(conn, _HEADER.size)
                    if header is None:
                        return
                    msg_type, length = parse_header(header)
                    payload = self._recv_exact(conn, length) if length else b""
                    if payload is None and length:
                        return
                    if msg_type == MSG_HELLO:
                        conn.sendall(
                            pack_message(
                                MSG_HELLO_ACK,
                                encode_json(
                                    {"model_name": "loopback-oracle", "max_batch": self.max_batch}
                                ),
                            )
                        )
                    elif msg_type == MSG_PREDICT:
                        context, actions, horizon = unpack_predict(payload)
                        request = PredictionRequest(context, actions, horizon)
                        token = HiddenStateToken(self.state_provider())
                        response = self.oracle.predict(request, token)
                        conn.sendall(
                            pack_message(
                                MSG_PREDICT_RESPONSE, pack_predict_response(response.frames)
                            )
                        )
                    else:
                        conn.sendall(
                            pack_message(
                                MSG_ERROR,
                                pack_error(ERR_BAD_REQUEST, f"unexpected message {msg_type}"),
                            )
                        )
            except (ProtocolError, OSError):
                return

    @staticmethod
    def _recv_exact(conn, n: int) -> bytes | None:
        chunks = []
        remaining = n
        while remaining:
            chunk = conn.recv(remaining)
            if not chunk:
                return None
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        try:
            self.listener.close()
        except OSError:
            pass
