"""Command-line entry point: estimate | train | test | run | report | verify."""
import argparse
import logging
import sys
from typing import List, Optional

from config import DEFAULT_LOG_LEVEL, ConfigError, load_config
from pipeline import EXIT_CONFIG, PHASES, run_pipeline

logger = logging.getLogger("rcpg")

VERB_PHASES = {
    "estimate": ("estimate",),
    "train": ("train",),
    "test": ("test",),
    "run": PHASES,
    "report": ("report",),
    "verify": ("verify",),
}


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}") from e


def _str_list(text: str) -> List[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rcpg",
        description="Robust constrained policy gradient experiments on inventory and safe navigation tasks.",
    )
    parser.add_argument("verb", choices=sorted(VERB_PHASES), help="pipeline phase(s) to run")
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--out", dest="output_dir", help="output directory (overrides output_dir)")
    parser.add_argument("--seeds", type=_int_list, help="comma-separated training seeds")
    parser.add_argument("--preset", choices=["desk", "paper"], help="scale preset")
    parser.add_argument("--algorithms", type=_str_list, help="comma-separated algorithm tags")
    parser.add_argument("--jobs", type=int, help="parallel workers")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, DEFAULT_LOG_LEVEL.upper(), logging.INFO))

    overrides = {
        "output_dir": args.output_dir,
        "seeds": args.seeds,
        "preset": args.preset,
        "algorithms": args.algorithms,
        "jobs": args.jobs,
    }
    try:
        cfg, warnings = load_config(args.config, overrides)
    except ConfigError as e:
        for problem in e.errors:
            logger.error(f"{args.config}: {problem}")
        return EXIT_CONFIG
    for warning in warnings:
        logger.warning(warning)

    logger.info(f"{args.verb}: {cfg.domain}, algorithms {[a.value for a in cfg.algorithms]}, "
                f"seeds {cfg.seeds}, output {cfg.output_dir}")
    return run_pipeline(cfg, VERB_PHASES[args.verb])


if __name__ == "__main__":
    sys.exit(main())
