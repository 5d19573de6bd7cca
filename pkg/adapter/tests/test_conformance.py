"""Golden-transcript conformance: the recorded engine bytes are the
contract; every response must match byte for byte."""

import io
from pathlib import Path

import pytest

from vp_adapter import framing
from vp_adapter.conformance import read_transcript, run_conformance
from vp_adapter.models import PersistenceModel
from vp_adapter.server import ServerSession

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="module")
def report():
    return run_conformance(GOLDEN)


def test_golden_directory_is_populated():
    assert sorted(p.name for p in GOLDEN.glob("*.transcript")) == [
        "bad_predict.transcript",
        "hello.transcript",
        "predict_persistence.transcript",
    ]


def test_all_checks_pass(report):
    assert report.passed, report.summary()


def test_hello_transcript_matches_exact_bytes():
    pairs = read_transcript(GOLDEN / "hello.transcript")
    session = ServerSession(PersistenceModel(), max_batch=64)
    for request, expected in pairs:
        assert session.handle(*request) == expected


def test_persistence_predict_exact_bytes():
    pairs = read_transcript(GOLDEN / "predict_persistence.transcript")
    session = ServerSession(PersistenceModel(), max_batch=64)
    assert len(pairs) == 2  # HELLO + PREDICT
    for request, expected in pairs:
        assert session.handle(*request) == expected


def test_truncated_message_yields_error_1():
    session = ServerSession(PersistenceModel())
    out = io.BytesIO()
    session.serve_stream(io.BytesIO(b"VPFM\x01\x03"), out)
    reply = framing.read_message(io.BytesIO(out.getvalue()))
    assert reply is not None
    assert reply[0] == framing.MSG_ERROR
    assert reply[1][:4] == b"\x01\x00\x00\x00"


def test_report_summary_prints_one_line_per_check(report):
    lines = report.summary().splitlines()
    assert lines[-1] == "CONFORMANT"
    assert all(line.startswith("[PASS]") for line in lines[:-1])
