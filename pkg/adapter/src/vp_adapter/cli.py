"""Adapter command line: serve a model, fit the linear predictor, or run
the conformance suite."""

import argparse
import sys
from pathlib import Path

from . import framing
from .conformance import run_conformance
from .models import fit_linear, save_weights
from .server import build_model, serve_stdio, serve_tcp


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vp-model-adapter")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="serve a model over the prediction protocol")
    p.add_argument("--transport", default="stdio", help="stdio or tcp:<port>")
    p.add_argument("--model", default="persistence", help="persistence or linear:<weights>")
    p.add_argument("--max-batch", type=int, default=64)

    p = sub.add_parser("fit-linear", help="fit the per-pixel linear predictor")
    p.add_argument("--dataset", required=True)
    p.add_argument("--steps", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("conformance", help="replay the golden transcripts")
    p.add_argument("--golden", required=True, help="directory of .transcript files")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        if args.max_batch < 1:
            print("--max-batch must be at least 1", file=sys.stderr)
            return 2
        try:
            model = build_model(args.model)
        except (ValueError, OSError) as exc:
            print(str(exc), file=sys.stderr)
            return 2
        if args.transport == "stdio":
            serve_stdio(model, args.max_batch)
            return 0
        if args.transport.startswith("tcp:"):
            try:
                port = int(args.transport[4:])
            except ValueError:
                print("tcp transport needs a numeric port", file=sys.stderr)
                return 2
            serve_tcp(model, port, args.max_batch)
            return 0
        print(f"unknown transport {args.transport!r}", file=sys.stderr)
        return 2

    if args.command == "fit-linear":
        try:
            weights = fit_linear(Path(args.dataset), steps=args.steps, seed=args.seed)
        except (ValueError, OSError) as exc:
            print(str(exc), file=sys.stderr)
            return 2
        save_weights(Path(args.out), weights)
        print(
            "fitted linear predictor: "
            + ", ".join(f"{v:+.4f}" for v in weights)
            + f" -> {args.out}"
        )
        return 0

    report = run_conformance(Path(args.golden))
    print(report.summary())
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
