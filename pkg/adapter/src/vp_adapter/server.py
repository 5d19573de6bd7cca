"""Protocol server: single connection, single in-flight request.

Sessions answer HELLO with HELLO_ACK, PREDICT with PREDICT_RESPONSE, and
report failures as ERROR messages: code 1 for malformed framing or
requests, code 2 for internal faults, code 3 for shapes the model cannot
serve.  Serving is stateless, so replaying any request yields identical
bytes.
"""

import json
import socket
import struct
import sys

import numpy as np

from . import framing
from .models import LinearModel, PersistenceModel


class ServerSession:
    def __init__(self, model, max_batch: int = 64):
        self.model = model
        self.max_batch = max_batch
        self.shape = None  # negotiated (H, W, C, A, T_c) after HELLO

    # -- message handlers ---------------------------------------------------

    def handle(self, msg_type: int, payload: bytes) -> bytes:
        try:
            if msg_type == framing.MSG_HELLO:
                return self._handle_hello(payload)
            if msg_type == framing.MSG_PREDICT:
                return self._handle_predict(payload)
            return framing.pack_error(
                framing.ERR_BAD_REQUEST, f"unexpected message type {msg_type}"
            )
        except framing.FramingError as exc:
            return framing.pack_error(framing.ERR_BAD_REQUEST, str(exc))
        except Exception as exc:  # internal model failure
            return framing.pack_error(framing.ERR_INTERNAL, f"{type(exc).__name__}: {exc}")

    def _handle_hello(self, payload: bytes) -> bytes:
        try:
            hello = json.loads(payload.decode("utf-8"))
            channels = int(hello["channels"])
            action_dim = int(hello["action_dim"])
            shape = (
                int(hello["height"]),
                int(hello["width"]),
                channels,
                action_dim,
                int(hello["context_frames"]),
            )
        except (ValueError, KeyError, UnicodeDecodeError) as exc:
            return framing.pack_error(framing.ERR_BAD_REQUEST, f"malformed HELLO: {exc}")
        if channels != 3:
            return framing.pack_error(
                framing.ERR_UNSUPPORTED_SHAPE, f"{channels} channels unsupported"
            )
        wanted = getattr(self.model, "action_dim", None)
        if wanted is not None and action_dim != wanted:
            return framing.pack_error(
                framing.ERR_UNSUPPORTED_SHAPE,
                f"model trained for action_dim {wanted}, got {action_dim}",
            )
        self.shape = shape
        return framing.pack_message(
            framing.MSG_HELLO_ACK,
            framing.encode_json(
                {"model_name": self.model.name, "max_batch": self.max_batch}
            ),
        )

    def _handle_predict(self, payload: bytes) -> bytes:
        if len(payload) < 28:
            return framing.pack_error(framing.ERR_BAD_REQUEST, "PREDICT payload too short")
        b, t_c, horizon, h, width, c, a = struct.unpack("<7I", payload[:28])
        if b < 1 or b > self.max_batch:
            return framing.pack_error(
                framing.ERR_BAD_REQUEST, f"batch {b} outside [1, {self.max_batch}]"
            )
        ctx_n = t_c * h * width * c
        act_n = b * (t_c - 1 + horizon) * a
        if len(payload) != 28 + 4 * (ctx_n + act_n):
            return framing.pack_error(
                framing.ERR_BAD_REQUEST, "PREDICT payload length mismatch"
            )
        wanted = getattr(self.model, "action_dim", None)
        if wanted is not None and a != wanted:
            return framing.pack_error(
                framing.ERR_UNSUPPORTED_SHAPE, f"action_dim {a} unsupported"
            )
        context = np.frombuffer(payload, "<f4", count=ctx_n, offset=28).reshape(
            t_c, h, width, c
        )
        actions = np.frombuffer(
            payload, "<f4", count=act_n, offset=28 + 4 * ctx_n
        ).reshape(b, t_c - 1 + horizon, a)
        frames = self.model.predict(context, actions, horizon)
        head = struct.pack("<5I", b, horizon, h, width, c)
        return framing.pack_message(
            framing.MSG_PREDICT_RESPONSE, head + frames.astype("<f4").tobytes()
        )

    # -- serving loops ------------------------------------------------------

    def serve_stream(self, reader, writer) -> None:
        """Answer messages until end-of-stream; framing faults report ERROR
        code 1 (then stop: the byte stream has no recovery point)."""
        while True:
            try:
                message = framing.read_message(reader)
            except framing.FramingError as exc:
                writer.write(framing.pack_error(framing.ERR_BAD_REQUEST, str(exc)))
                writer.flush()
                return
            if message is None:
                return
            writer.write(self.handle(*message))
            writer.flush()


def build_model(spec: str):
    name, _, arg = spec.partition(":")
    if name == "persistence":
        return PersistenceModel()
    if name == "linear":
        if not arg:
            raise ValueError("linear model needs a weights path: linear:<path>")
        from .models import load_weights

        return LinearModel(load_weights(arg))
    raise ValueError(f"unknown model spec {spec!r}")


def serve_stdio(model, max_batch: int = 64) -> None:
    session = ServerSession(model, max_batch)
    session.serve_stream(sys.stdin.buffer, sys.stdout.buffer)


def serve_tcp(model, port: int, max_batch: int = 64) -> int:
    """Serve one connection at a time; returns the bound port."""
    if not 1024 <= port <= 65535:
        raise ValueError("tcp port must lie in [1024, 65535]")
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    listener.bind(("127.0.0.1", port))
    listener.listen(1)
    bound = listener.getsockname()[1]
    session = ServerSession(model, max_batch)
    try:
        while True:
            conn, _ = listener.accept()
            with conn:
                reader = conn.makefile("rb")
                writer = conn.makefile("wb")
                session.serve_stream(reader, writer)
    finally:
        listener.close()
    return bound
