#!/usr/bin/env python3
"""Regenerate the adapter conformance transcripts from the engine side.

Each .transcript file holds (request message, expected response message)
pairs as raw protocol bytes.  The requests are exactly what the engine
client sends; the expected responses follow the persistence-model contract
(every predicted frame equals the final context frame) and the canonical
JSON encoding, so the adapter can be byte-compared without importing any
engine code.

Run from the repository root:  python scripts/gen_golden_transcripts.py
"""

import struct
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from vfmpc import protocol as proto  # noqa: E402
from vfmpc.models import PredictionRequest  # noqa: E402

GOLDEN_DIR = Path(__file__).resolve().parent.parent / "adapter" / "tests" / "golden"

PERSISTENCE_ACK = proto.pack_message(
    proto.MSG_HELLO_ACK,
    proto.encode_json({"model_name": "persistence", "max_batch": 64}),
)


def expected_persistence_response(request: PredictionRequest) -> bytes:
    last = request.context_frames[-1]
    frames = np.broadcast_to(
        last, (request.batch, request.horizon) + last.shape
    ).astype(np.float32)
    return proto.pack_message(
        proto.MSG_PREDICT_RESPONSE, proto.pack_predict_response(frames)
    )


def hello_transcript() -> bytes:
    hello = proto.pack_message(
        proto.MSG_HELLO, proto.hello_payload(2, 10, 64, 64, 3, 2)
    )
    return hello + PERSISTENCE_ACK


def predict_transcript() -> bytes:
    rng = np.random.default_rng(20240817)
    context = rng.random((2, 64, 64, 3)).astype(np.float32)
    actions = rng.uniform(-0.08, 0.08, (3, 11, 2)).astype(np.float32)
    request = PredictionRequest(context, actions, 10)
    parts = [
        proto.pack_message(proto.MSG_HELLO, proto.hello_payload(2, 10, 64, 64, 3, 2)),
        PERSISTENCE_ACK,
        proto.pack_message(proto.MSG_PREDICT, proto.pack_predict(request)),
        expected_persistence_response(request),
    ]
    return b"".join(parts)


def error_transcript() -> bytes:
    # A PREDICT whose payload length disagrees with its own header must be
    # answered with ERROR code 1.
    bogus = struct.pack("<7I", 2, 2, 10, 64, 64, 3, 2) + b"\x00" * 16
    request = proto.pack_message(proto.MSG_PREDICT, bogus)
    message = "PREDICT payload length mismatch"
    expected = proto.pack_message(
        proto.MSG_ERROR, proto.pack_error(proto.ERR_BAD_REQUEST, message)
    )
    return request + expected


def pushing_dataset() -> None:
    """A small standard pushing dataset so the adapter's learned-model tests
    run without the engine installed."""
    from vfmpc import world  # noqa: E402
    from vfmpc.dataset import collect_dataset  # noqa: E402

    collect_dataset(
        world.WorldConfig(),
        n_traj=10,
        out_path=GOLDEN_DIR / "pushing.vpds",
        traj_len=20,
        seed=424242,
    )


def main() -> None:
    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
    (GOLDEN_DIR / "hello.transcript").write_bytes(hello_transcript())
    (GOLDEN_DIR / "predict_persistence.transcript").write_bytes(predict_transcript())
    (GOLDEN_DIR / "bad_predict.transcript").write_bytes(error_transcript())
    pushing_dataset()
    for name in (
        "hello.transcript",
        "predict_persistence.transcript",
        "bad_predict.transcript",
        "pushing.vpds",
    ):
        size = (GOLDEN_DIR / name).stat().st_size
        print(f"wrote {name} ({size} bytes)")


if __name__ == "__main__":
    main()
