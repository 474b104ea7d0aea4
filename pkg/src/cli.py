from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from . import __version__
from .config import load_config
from .engine.orchestrator import Orchestrator
from .engine.tasks import InitTask, RefineTask, ReportTask, SimulateTask, SweepTask, Task
from .errors import DogeError

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="python -m src.cli",
                                 description="Gyroscope bias and camera-IMU rotation initialisation.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--config", default=None, help="YAML config (default config/config.yaml if present)")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                    help="override a config value; repeatable")
    ap.add_argument("--quiet", action="store_true", help="no console output besides errors")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a scenario into a dataset directory")
    p.add_argument("--out", required=True)

    p = sub.add_parser("init", help="solve one window, print or write the report JSON")
    p.add_argument("dataset")
    p.add_argument("--out", default=None)
    p.add_argument("--start", type=int, default=0, help="first keyframe of the window")
    p.add_argument("--attempts", type=int, default=1, help="slide forward until accepted, at most this many windows")

    p = sub.add_parser("refine", help="initialise then refine window by window into a CSV")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--handoff", default=None, help="write the hand-off package JSON here")
    p.add_argument("--start", type=int, default=0)

    p = sub.add_parser("sweep", help="run a benchmark sweep and write reports")
    p.add_argument("spec", nargs="?", default=None, help="sweep spec YAML (default: config bench section)")
    p.add_argument("--out", default=None)

    p = sub.add_parser("report", help="recompute summary tables from outcomes.csv")
    p.add_argument("outcomes")
    p.add_argument("--out", required=True)
    return ap


def task_from_args(args: argparse.Namespace) -> Task:
    if args.command == "simulate":
        return SimulateTask(args.out)
    if args.command == "init":
        return InitTask(args.dataset, args.out, args.start, args.attempts)
    if args.command == "refine":
        return RefineTask(args.dataset, args.out, args.handoff, args.start)
    if args.command == "sweep":
        return SweepTask(args.spec, args.out)
    return ReportTask(args.outcomes, args.out)


def _fail(exc: BaseException) -> int:
    doc = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, DogeError):
        doc.update(exc.context())
    sys.stderr.write(json.dumps(doc) + "\n")
    return 1


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)

    try:
        cfg = load_config(args.config, args.overrides)
    except DogeError as e:
        return _fail(e)

    # ---- logging ----
    log_level = os.environ.get("DOGE_LOG_LEVEL", cfg.logging.level).upper()
    logging.basicConfig(
        level=getattr(logging, log_level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    orch = Orchestrator(cfg=cfg, overrides=list(args.overrides), quiet=args.quiet)
    try:
        orch.run_task_once(task_from_args(args))
    except Exception as e:  # noqa: BLE001 - reported as JSON
        logger.debug("command failed", exc_info=True)
        return _fail(e)
    return 0


if __name__ == "__main__":
    sys.exit(main())
