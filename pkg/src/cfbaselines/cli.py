"""Command line entry point: ``cfbaselines <stage> --config run.json`` or ``cfbaselines render MAP``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .optim import NumericError
from .render import render_map
from .tensorio import ContainerError

EXIT_OK, EXIT_CONFIG, EXIT_PREREQ, EXIT_NUMERIC = 0, 2, 3, 4


def _baseline_list(text: str) -> list[str]:
    return [b.strip().lower() for b in text.split(",") if b.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfbaselines", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name in pipeline.STAGES + ("run",):
        help_ = "run every stage in order" if name == "run" else f"run the {name} stage"
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, metavar="PATH")
        s.add_argument("--out", metavar="DIR", help="output directory (overrides output_dir)")
        s.add_argument("--seed", type=int, metavar="N", help="override the config seed")
        s.add_argument("--baselines", type=_baseline_list, metavar="LIST", help="comma-separated baseline variants")
        s.add_argument("--jobs", type=int, metavar="N", help="worker processes for attribute/evaluate")
        s.add_argument("--force", action="store_true", help="rerun even if the manifest says up to date")
    r = sub.add_parser("render", help="render a CFT1 map to PGM/PPM")
    r.add_argument("map", metavar="ATTR_FILE")
    r.add_argument("--colormap", choices=("gray", "diverging"), default="gray")
    r.add_argument("--output", "-o", metavar="PATH")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "render":
            print(render_map(args.map, args.colormap, args.output))
            return EXIT_OK
        overrides = {"seed": args.seed, "baselines": args.baselines, "jobs": args.jobs}
        cfg = pipeline.load_config(args.config, overrides)
        stages = pipeline.STAGES if args.command == "run" else (args.command,)
        pipeline.run_stages(cfg, args.out, stages, force=args.force)
        return EXIT_OK
    except (pipeline.ConfigError, ContainerError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except pipeline.PrerequisiteError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PREREQ
    except (NumericError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except pipeline.PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
