"""Single-window initialisation and sliding-window refinement over one dataset."""
from __future__ import annotations

import logging
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..config import AppConfig
from ..errors import DegenerateWindowError
from ..models import CalibState, Dataset
from ..notifiers.reports import write_json, write_refine_csv
from ..refiner import RefineStep, handoff_package, run_sequence
from ..scoring import compute_metrics
from ..solver import SolveReport, irls_solve
from ..sources import export, ingest
from ..simworld import generate
from ..window import WindowProblem, build_window, iter_windows, select_keyframes

logger = logging.getLogger(__name__)


def initial_state(dataset: Dataset) -> CalibState:
    """Zero bias and the calibration shipped with the data."""
    return CalibState(np.zeros(3), np.array(dataset.r_ci_nominal, dtype=float))


def solve_first(dataset: Dataset, cfg: AppConfig, keyframes: Sequence[int], start: int = 0,
                max_attempts: int = 1) -> Tuple[SolveReport, WindowProblem, int]:
    """Solve the window at `start`, sliding forward until one is accepted or attempts run out."""
    size = cfg.solver.window_size
    state = initial_state(dataset)
    last: Optional[Tuple[SolveReport, WindowProblem, int]] = None
    for attempt, idx in enumerate(iter_windows(dataset, size, keyframes, start)):
        if attempt >= max_attempts:
            break
        try:
            window = build_window(dataset, idx, state, cfg.solver)
        except DegenerateWindowError as e:
            logger.info("window at keyframe %d degenerate: %s", start + attempt, e)
            continue
        report = irls_solve(window, state, cfg.solver)
        last = (report, window, start + attempt)
        if report.success:
            break
    if last is None:
        raise DegenerateWindowError(f"no usable {size}-keyframe window from keyframe {start}")
    return last


def init_document(dataset: Dataset, report: SolveReport, window: WindowProblem, start: int) -> Dict[str, Any]:
    doc = report.to_dict()
    doc["dataset"] = dataset.name
    doc["window"] = {"start": start, "keyframe_ids": list(window.keyframe_ids),
                     "t0": float(window.keyframe_times[0]), "t1": float(window.keyframe_times[-1])}
    doc["timings_ms"] = {k: 1e3 * v for k, v in report.timings.items()}
    if dataset.ground_truth is not None:
        m = compute_metrics(report.state, dataset.ground_truth, window)
        doc["metrics"] = {"b_g_error": m.b_g_error, "b_g_error_absolute": m.b_g_error_absolute,
                          "r_ci_error_deg": m.r_ci_error_deg, "rel_rot_error_deg": m.rel_rot_error_deg}
    return doc


def run_init(dataset_dir: str, cfg: AppConfig, out_path: Optional[str] = None, start: int = 0,
             max_attempts: int = 1) -> Dict[str, Any]:
    dataset = ingest(dataset_dir)
    keyframes = select_keyframes(dataset.frames, cfg.solver.keyframe_hz)
    report, window, used = solve_first(dataset, cfg, keyframes, start, max_attempts)
    doc = init_document(dataset, report, window, used)
    if out_path:
        write_json(doc, out_path)
    logger.info("init on %s: success=%s pass_rate=%.3f b_g=%s", dataset.name, report.success,
                report.pass_rate, np.array2string(report.state.b_g, precision=5))
    return doc


def _windows(dataset: Dataset, keyframes: Sequence[int], size: int, start: int, state: CalibState,
             cfg: AppConfig) -> Iterator[Optional[WindowProblem]]:
    for idx in iter_windows(dataset, size, keyframes, start):
        try:
            yield build_window(dataset, idx, state, cfg.solver)
        except DegenerateWindowError as e:
            logger.debug("window %s..%s degenerate: %s", idx[0], idx[-1], e)
            yield None


def run_refine(dataset_dir: str, cfg: AppConfig, out_csv: str, handoff_path: Optional[str] = None,
               start: int = 0, max_attempts: int = 20) -> List[RefineStep]:
    """Initialise on the first accepted window, then refine window by window.

    Writes the per-window series to `out_csv` and, when translation parallax is
    reached, the hand-off package to `handoff_path`.
    """
    dataset = ingest(dataset_dir)
    keyframes = select_keyframes(dataset.frames, cfg.solver.keyframe_hz)
    report, window, used = solve_first(dataset, cfg, keyframes, start, max_attempts)
    if not report.success:
        raise DegenerateWindowError(f"no accepted initial window in {max_attempts} attempts: {report.message}")
    windows = _windows(dataset, keyframes, cfg.solver.window_size, used + 1, report.state, cfg)
    steps = run_sequence(windows, report, dataset.noise, cfg.refiner, cfg.solver, dataset.ground_truth, window)
    write_refine_csv((s.row() for s in steps), out_csv)
    handoff = next((s for s in steps if s.handoff), None)
    if handoff is not None and handoff_path:
        write_json(handoff_package(handoff), handoff_path)
    logger.info("refined %d windows on %s, hand-off at %s", len(steps), dataset.name,
                "none" if handoff is None else f"window {handoff.index}")
    return steps


def run_simulate(cfg: AppConfig, out_dir: str) -> Dataset:
    dataset = generate(cfg.scenario)
    export(dataset, out_dir)
    return dataset
