"""merit-extract: embed audio files and write a merit embedding store."""

from __future__ import annotations

import argparse
import sys

from .extract import DEFAULT_LAYERS, ExtractionJob, extract


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="merit-extract",
        description="Run the frozen encoder over audio files, mean-pool the "
                    "selected layers, and write a merit embedding store.")
    parser.add_argument("files", nargs="+", help="input audio files (PCM WAV)")
    parser.add_argument("--layers", default=",".join(map(str, DEFAULT_LAYERS)),
                        help="comma-separated encoder layer indices")
    parser.add_argument("--out", required=True, help="output store path")
    parser.add_argument("--window-seconds", type=float, default=10.0)
    parser.add_argument("--batch-size", type=int, default=4)
    parser.add_argument("--encoder", choices=("auto", "pretrained", "deterministic"),
                        default="auto")
    args = parser.parse_args(argv)
    try:
        layers = tuple(int(tok) for tok in args.layers.split(","))
        job = ExtractionJob(audio_files=args.files, out_path=args.out,
                            layers=layers, window_seconds=args.window_seconds,
                            batch_size=args.batch_size,
                            encoder_kind=args.encoder)
        path = extract(job)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 2
    print(f"wrote {path} ({len(args.files)} records, "
          f"dim {len(layers) * 1024})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
