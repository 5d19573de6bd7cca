"""Golden-transcript conformance: replay recorded request bytes through a
server session and byte-compare the responses.

Transcript files hold one or more (request message, expected response
message) pairs concatenated; they are produced by the planning engine so
this package can be tested standalone against the real client's bytes.
"""

import io
from dataclasses import dataclass, field
from pathlib import Path

from . import framing
from .server import ServerSession
from .models import PersistenceModel


@dataclass
class ConformanceReport:
    checks: list = field(default_factory=list)

    def add(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append({"name": name, "passed": passed, "detail": detail})

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def summary(self) -> str:
        lines = [
            f"[{'PASS' if c['passed'] else 'FAIL'}] {c['name']}"
            + (f": {c['detail']}" if c["detail"] and not c["passed"] else "")
            for c in self.checks
        ]
        verdict = "CONFORMANT" if self.passed else "NOT CONFORMANT"
        return "\n".join(lines + [verdict])


def read_transcript(path: Path) -> list[tuple[tuple[int, bytes], bytes]]:
    """-> [(request (type, payload), expected response bytes), ...]"""
    stream = io.BytesIO(Path(path).read_bytes())
    pairs = []
    while True:
        request = framing.read_message(stream)
        if request is None:
            break
        start = stream.tell()
        response = framing.read_message(stream)
        if response is None:
            raise framing.FramingError(f"{path}: transcript ends without a response")
        end = stream.tell()
        stream.seek(start)
        raw_response = stream.read(end - start)
        pairs.append((request, raw_response))
    return pairs


def run_conformance(golden_dir: Path, max_batch: int = 64) -> ConformanceReport:
    """Replay every golden transcript through a fresh persistence session,
    plus the framing edge cases that need no recorded bytes."""
    golden_dir = Path(golden_dir)
    report = ConformanceReport()

    transcripts = sorted(golden_dir.glob("*.transcript"))
    if not transcripts:
        report.add("golden transcripts present", False, f"none found in {golden_dir}")
        return report
    for path in transcripts:
        session = ServerSession(PersistenceModel(), max_batch=max_batch)
        for i, (request, expected) in enumerate(read_transcript(path)):
            got = session.handle(*request)
            report.add(
                f"{path.name}[{i}]",
                got == expected,
                f"{len(got)} bytes vs expected {len(expected)}",
            )

    # framing edge cases
    session = ServerSession(PersistenceModel(), max_batch=max_batch)
    out = io.BytesIO()
    session.serve_stream(io.BytesIO(b"VPFM\x01"), out)  # truncated header
    reply = framing.read_message(io.BytesIO(out.getvalue()))
    report.add(
        "truncated message yields ERROR 1",
        reply is not None and reply[0] == framing.MSG_ERROR and reply[1][:4] == b"\x01\x00\x00\x00",
    )

    oversized = framing.HEADER.pack(framing.MAGIC, 1, framing.MSG_PREDICT, framing.MAX_PAYLOAD + 1)
    out = io.BytesIO()
    ServerSession(PersistenceModel()).serve_stream(io.BytesIO(oversized), out)
    reply = framing.read_message(io.BytesIO(out.getvalue()))
    report.add(
        "oversized payload rejected with ERROR 1",
        reply is not None and reply[0] == framing.MSG_ERROR and reply[1][:4] == b"\x01\x00\x00\x00",
    )
    return report
