"""``glimpsekit`` command line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import io
from .experiment import (
    ExperimentError,
    evaluate_detections,
    generate_scene_files,
    load_config,
    run_experiment,
)


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glimpsekit", description="Budgeted glimpse selection and open-set tile search.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a closed-set or open-set experiment")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--out-dir", type=Path, default=Path("results"))
    run.add_argument("--seed", type=_u64, help="override the master seed")

    gen = sub.add_parser("gen-scenes", help="write synthetic scenes, objectness maps and gist images")
    gen.add_argument("--config", required=True, type=Path)
    gen.add_argument("--out-dir", required=True, type=Path)
    gen.add_argument("--seed", type=_u64)

    ev = sub.add_parser("eval", help="score an external detections CSV")
    ev.add_argument("--detections", required=True, type=Path)
    ev.add_argument("--scenes", required=True, type=Path)
    ev.add_argument("--out", required=True, type=Path)
    ev.add_argument("--iou", type=float, default=0.5)
    ev.add_argument("--score-threshold", type=float, default=0.0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg = replace(cfg, seed=args.seed)
            for role, path in run_experiment(cfg, args.out_dir).items():
                logging.info("wrote %s -> %s", role, path)
        elif args.command == "gen-scenes":
            d = json.loads(args.config.read_text(encoding="utf-8"))
            generate_scene_files(d, args.out_dir, args.seed)
        else:
            evaluate_detections(args.detections, args.scenes, args.out, args.iou, args.score_threshold)
    except (ExperimentError, io.FormatError, OSError, json.JSONDecodeError) as exc:
        print(f"glimpsekit: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
