"""``pulse-lgn`` command-line entry point."""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import sys
from pathlib import Path

from . import __version__, pipeline
from .errors import PulseLgnError

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_INVALID = 2

COMMANDS = tuple(pipeline.COMMANDS) + ("synth",)


def _windows(text):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad window list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pulse-lgn", description="Relaxation-mode identification and diagnostics.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--manifest", help="dataset manifest (JSON); for synth, the population spec")
    p.add_argument("--population", help="population spec for synth (alias of --manifest)")
    p.add_argument("--config", help="run configuration (JSON)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--windows", type=_windows, help="comma-separated windows in seconds")
    p.add_argument("--k", type=int, help="early-diagnostic count for prognosis")
    p.add_argument("--mode", choices=("loocv", "double-blind"), help="reconstruction holdout")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _write_meta(cfg, command, argv):
    meta = {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "timestamp_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        mode = args.mode.replace("-", "_") if args.mode else None
        cfg = pipeline.load_config(
            args.config, out_dir=args.out, windows=args.windows, k=args.k, mode=mode, seed=args.seed, workers=args.workers
        )
        if args.command == "synth":
            src = args.population or args.manifest
            if src is None:
                raise PulseLgnError("synth needs --manifest (population spec)")
            report = pipeline.cmd_synth(src, cfg)
        else:
            if args.manifest is None:
                raise PulseLgnError(f"{args.command} needs --manifest")
            from .io import load_manifest

            dataset = load_manifest(args.manifest, strict=False)
            logging.getLogger(__name__).info("loaded %d cells, %d checkpoints", len(dataset.cells), dataset.n_checkpoints)
            report = pipeline.COMMANDS[args.command](dataset, cfg)
        _write_meta(cfg, args.command, argv)
    except PulseLgnError as exc:
        print(f"pulse-lgn: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    failures = int(report.get("failures", 0) or 0)
    if failures:
        print(f"pulse-lgn: {failures} trace(s) failed; see report", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
