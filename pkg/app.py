"""Command-line entrypoint for the cross-embodiment augmentation engine.

Usage: ``python app.py <command> [options]``. Exit codes: 0 success, 1 invalid
input or a failed run, 2 partial failure in strict mode.
"""

from __future__ import annotations

import argparse
import sys
from typing import Any, Dict, List, NoReturn, Optional

from config import ViewMode, load_run_config
from pipeline_commands import COMMANDS
from services.bench_service import STAGES
from utils.errors import AugmentError, UsageError
from utils.logging import configure_logging, get_logger
from workers.frame_pool import configure_pool

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_PARTIAL = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def _shared_flags() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="JSON run configuration file")
    shared.add_argument("--seed", type=int, help="master seed")
    shared.add_argument("--workers", type=int, help="worker count (does not change outputs)")
    shared.add_argument("--backend", choices=["threading", "loky", "sequential"])
    shared.add_argument("--strict", action="store_true", default=None, help="exit 2 on any partial failure")
    shared.add_argument("--log-level")
    shared.add_argument("--log-format", choices=["text", "json"])
    return shared


def build_parser() -> argparse.ArgumentParser:
    shared = _shared_flags()
    parser = _Parser(prog="xaug", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-paired", parents=[shared], help="render paired images of several robots")
    p.add_argument("--robots", required=True, help="comma-separated chain names")
    p.add_argument("--count", type=int, required=True, help="gripper poses to sample")
    p.add_argument("--out", required=True)
    p.add_argument("--backgrounds", help="directory of background images for pasted variants")

    p = sub.add_parser("gen-demos", parents=[shared], help="synthesize demonstrations")
    p.add_argument("--robot", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--frames", type=int, default=30)
    p.add_argument("--out", required=True)

    p = sub.add_parser("import-oxe", parents=[shared], help="import episode_* folders")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--robot", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("align", parents=[shared], help="apply a rigid end-effector alignment")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--transform", required=True, help="tx,ty,tz,qw,qx,qy,qz")
    p.add_argument("--out", required=True)

    for name, help_text in (("ro-aug", "swap the robot"), ("rovi-aug", "swap the robot, then the view")):
        p = sub.add_parser(name, parents=[shared], help=help_text)
        p.add_argument("--in", dest="input", required=True)
        p.add_argument("--source", required=True)
        p.add_argument("--target", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--no-brightness", action="store_true", help="disable brightness augmentation")
        if name == "rovi-aug":
            p.add_argument("--mode", choices=[m.value for m in ViewMode])

    p = sub.add_parser("vi-aug", parents=[shared], help="synthesize perturbed viewpoints")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--mode", choices=[m.value for m in ViewMode])
    p.add_argument("--out", required=True)

    p = sub.add_parser("compose", parents=[shared], help="cross-product of four datasets")
    p.add_argument("--inputs", required=True, help="D1^S,D2^T,D2^T->S,D1^S->T")
    p.add_argument("--extra", nargs="*", help="additional datasets appended to the union")
    p.add_argument("--out", required=True)

    p = sub.add_parser("stats", parents=[shared], help="print dataset statistics as JSON")
    p.add_argument("--in", dest="input", required=True)

    p = sub.add_parser("preview", parents=[shared], help="write a contact sheet of one trajectory")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--traj", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--masks", action="store_true", help="add a row of robot masks")

    p = sub.add_parser("bench", parents=[shared], help="measure stage throughput")
    p.add_argument("--stage", choices=STAGES, required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--bench-workers", type=int, help="worker count of the multi-worker run")

    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {
        "master_seed": args.seed,
        "workers": args.workers,
        "parallel_backend": args.backend,
        "strict": args.strict,
        "log_level": args.log_level,
        "log_format": args.log_format,
    }
    if getattr(args, "no_brightness", False):
        overrides["roaug"] = {"brightness_range": 0}
    if getattr(args, "mode", None):
        overrides["viaug"] = {"mode": args.mode}
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        settings = load_run_config(args.config, _overrides(args))
    except AugmentError as exc:
        configure_logging()
        logger.error("Invalid invocation", extra={"error": str(exc)})
        return EXIT_FAILURE

    configure_logging(settings.log_level, settings.log_format)
    configure_pool(settings.workers, settings.parallel_backend)
    logger.info("Running command", extra={"command": args.command, "seed": settings.master_seed, "workers": settings.workers})

    try:
        outcome = COMMANDS[args.command](args, settings)
    except AugmentError as exc:
        logger.error("Command failed", extra={"command": args.command, "error": str(exc), "kind": type(exc).__name__})
        return EXIT_FAILURE

    if outcome.report is not None and outcome.report.failures:
        logger.warning("Run finished with failures", extra={"command": args.command, "failures": len(outcome.report.failures)})
    if outcome.partial and settings.strict:
        return EXIT_PARTIAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
