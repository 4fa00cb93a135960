"""Extraction CLI: segment labelled audio by temporal support and emit TSEB v1
embeddings plus a manifest for the probing harness."""

from __future__ import annotations

import argparse
import json
import sys

from .adapters import ADAPTERS, ExtractorSpec
from .extract import extract_dataset


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsextract", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract a labelled audio directory")
    p.add_argument("--model", choices=sorted(ADAPTERS), required=True)
    p.add_argument("--ts", type=float, required=True, help="temporal support in seconds")
    p.add_argument("--layers", choices=["last", "all"], default="last")
    p.add_argument("--audio", required=True, help="directory of wav/flac files")
    p.add_argument("--labels", required=True, help="labels JSON (see extract module docs)")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--device", default="cpu")
    p.add_argument("--pad", action="store_true", help="zero-pad clips shorter than one segment")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = ExtractorSpec(
            model_id=args.model,
            ts_seconds=args.ts,
            layer_capture=args.layers,
            checkpoint_path=args.checkpoint,
            device=args.device,
            pad_short=args.pad,
        ).validate()
        manifest, skipped = extract_dataset(args.audio, args.labels, spec, args.out)
    except Exception as exc:  # noqa: BLE001 - single CLI error boundary
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(
        json.dumps(
            {
                "manifest": f"{args.out}/manifest.json",
                "clips": len(manifest["clips"]),
                "skipped": skipped,
            }
        )
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
