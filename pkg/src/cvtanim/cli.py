"""Command line entry point.

Exit status: 0 on success, 1 for configuration errors, 2 when a stage fails.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2
COMMANDS = ("synth", "tessellate", "track", "simulate", "export", "morph", "report", "run")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cvtanim", description="Volumetric capture to physics simulation pipeline.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        helptext = "run the configured stages in order" if name == "run" else f"run the {name} stage"
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True, help="project configuration (JSON)")
        s.add_argument("--seed", type=int, default=None, help="override the configured seed")
        s.add_argument("--threads", type=int, default=None, help="threads for the linear algebra backend")
        s.add_argument("--workdir", default=None, help="override the artifact directory")
        s.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return p


def _limit_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise ValueError("--threads must be >= 1")
    # effective only before the numerical libraries load their thread pools
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        _limit_threads(args.threads)
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    import dataclasses

    from .errors import ConfigError
    from .pipeline.config import load_config
    from .pipeline.stages import StageFailure, run_pipeline, run_stage, table_lines

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.workdir is not None:
            cfg = dataclasses.replace(cfg, workdir=args.workdir)
        if args.command == "run":
            results = run_pipeline(cfg)
        else:
            results = [run_stage(cfg, args.command)]
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageFailure as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_STAGE
    for r in results:
        print(f"{r['stage']}: done in {r['time_s']:.2f} s")
        if r["stage"] == "report":
            for line in table_lines(r["metrics"]):
                print(line)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
