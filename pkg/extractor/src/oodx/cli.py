"""Command line entry point.

    ood-extract --ckpt model.pt --data set.npz --out dump.oodf \
                [--mc-dropout T] [--odin T,EPS] [--seed S] \
                [--batch-size B] [--device cpu]

Exit codes: 0 on success, 2 on any extraction error.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .errors import ExtractError
from .extract import ExtractionJob, OdinOptions, extract


def _parse_odin(text: str) -> OdinOptions:
    parts = text.split(",")
    if len(parts) != 2:
        raise ExtractError(f"--odin expects 'T,EPS', got {text!r}")
    try:
        t, eps = float(parts[0]), float(parts[1])
    except ValueError:
        raise ExtractError(f"--odin expects two numbers, got {text!r}")
    return OdinOptions(temperature=t, epsilon=eps)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ood-extract",
        description="Export a frozen classifier's features, logits and optional "
        "stochastic channels as an .oodf dump",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--ckpt", required=True, help="checkpoint file")
    parser.add_argument("--data", required=True, help="dataset .npz with 'x' and optional 'y'")
    parser.add_argument("--out", required=True, help="output dump path (.oodf)")
    parser.add_argument(
        "--mc-dropout", type=int, metavar="T", help="dropout passes for the probability stack"
    )
    parser.add_argument(
        "--odin", metavar="T,EPS", help="perturbed-logits channel: temperature and noise"
    )
    parser.add_argument("--seed", type=int, help="required when --mc-dropout is given")
    parser.add_argument("--batch-size", type=int, default=128)
    parser.add_argument("--device", default="cpu")
    args = parser.parse_args(argv)

    try:
        job = ExtractionJob(
            checkpoint=args.ckpt,
            dataset=args.data,
            out=args.out,
            mc_dropout_T=args.mc_dropout,
            odin=None if args.odin is None else _parse_odin(args.odin),
            batch_size=args.batch_size,
            device=args.device,
            seed=args.seed,
        )
        result = extract(job)
    except ExtractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {result.dump} ({result.n} x {result.d}, {result.c} classes)")
    print(f"wrote {result.head}")
    print(f"wrote {result.sidecar}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
