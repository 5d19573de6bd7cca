"""Reference model adapter for the binary prediction wire protocol.

Proves the protocol from the model side: a server skeleton plus two
reference models (a persistence baseline and a per-pixel learned linear
predictor), with a conformance suite that replays golden transcripts.
This package deliberately shares no code with the planning engine; the
wire bytes are the only contract.
"""

__version__ = "0.1.0"
