"""Command-line entry point.

    nmlindblad full --preset set1 --out results
    nmlindblad convert --out results          # reuse results/map.txt

Exit codes: 0 success, 2 configuration error, 3 numerical error, 4 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import traceback
from dataclasses import replace

from . import pipeline
from .config import PRESETS, RunConfig, load_config, preset
from .errors import ConfigError, MapFormatError, MissingArtifactError, NMLindbladError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

SUBCOMMANDS = ("simulate", "convert", "measure", "conjugate", "bloch", "full")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nmlindblad", description="Canonical Lindblad analysis of spin-boson dynamics.")
    parser.add_argument("command", choices=SUBCOMMANDS)
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--config", help="flat key = value run configuration")
    source.add_argument("--preset", choices=sorted(PRESETS), help="built-in parameter set")
    parser.add_argument("--out", help="output directory (overrides outputs.directory)")
    parser.add_argument("--stage", choices=pipeline.STAGES, help="with 'full': stop after this stage")
    parser.add_argument("--verbose", "-v", action="store_true")
    return parser


def resolve_config(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    else:
        cfg = RunConfig()
    if args.out:
        cfg = replace(cfg, outputs=replace(cfg.outputs, directory=args.out))
    return cfg


def _origin(exc):
    frames = traceback.extract_tb(exc.__traceback__)
    if not frames:
        return "nmlindblad"
    return os.path.splitext(os.path.basename(frames[-1].filename))[0]


def _run(args) -> None:
    cfg = resolve_config(args)
    if args.stage and args.command != "full":
        raise ConfigError("--stage is only valid with the 'full' command", field="--stage")
    if args.command == "full":
        pipeline.run_pipeline(cfg, stop=args.stage)
        return
    os.makedirs(cfg.outputs.directory, exist_ok=True)
    runner = {
        "simulate": pipeline.stage_simulate,
        "convert": pipeline.stage_convert,
        "measure": pipeline.stage_measure,
        "conjugate": pipeline.stage_conjugate,
        "bloch": pipeline.stage_bloch,
    }[args.command]
    runner(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        _run(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingArtifactError, MapFormatError, OSError) as exc:
        print(f"I/O error in {_origin(exc)}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NMLindbladError, ArithmeticError, ValueError) as exc:
        print(f"numerical error in {_origin(exc)}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
