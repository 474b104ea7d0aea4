"""Benchmark sweep: segments x window sizes x extrinsic deformations x weighting modes."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config import AppConfig, ExperimentSpec, RefinerConfig, SolverConfig
from ..errors import DogeError
from ..manifold import geodesic_angle
from ..models import CalibState, Dataset
from ..notifiers.reports import emit_report, print_summary, read_outcomes, summarize
from ..refiner import run_sequence
from ..scoring import DETECTED_BAD, OutcomeRecord, classify, compute_metrics
from ..simworld import generate, perturb_rotation
from ..solver import irls_solve
from ..sources import ingest
from ..window import build_window, iter_windows, mean_angular_rate, select_keyframes

logger = logging.getLogger(__name__)

MAX_SCENARIOS = 1000


@dataclass(frozen=True)
class Segment:
    index: int
    source: int  # scenario index, 0 for a recorded dataset
    keyframes: Tuple[int, ...]  # keyframe indices into the source dataset's frames
    t0: float


@dataclass(frozen=True)
class Cell:
    segment: Segment
    window_size: int
    deformation_deg: float
    mode: str
    repetition: int


@lru_cache(maxsize=4)
def _load_source(spec_json: str, source: int) -> Dataset:
    spec = ExperimentSpec.model_validate_json(spec_json)
    if spec.dataset:
        return ingest(spec.dataset)
    scenario = spec.scenario.model_copy(update={"seed": spec.seed * MAX_SCENARIOS + source})
    return generate(scenario)


def _integrated_rotation_deg(dataset: Dataset, t0_ns: int, t1_ns: int) -> float:
    gt = dataset.ground_truth
    if gt is not None:
        a, b = gt.index_at(t0_ns), gt.index_at(t1_ns)
        R = gt.rotations[a:b + 1]
        return float(np.degrees(sum(geodesic_angle(R[k], R[k + 1]) for k in range(len(R) - 1))))
    t = dataset.imu.t_ns
    sel = (t >= t0_ns) & (t < t1_ns)
    dts = np.diff(t[sel]) * 1e-9
    rates = np.linalg.norm(dataset.imu.omega[sel][:-1], axis=1)
    return float(np.degrees(np.sum(rates * dts)))


def _source_segments(dataset: Dataset, spec: ExperimentSpec, source: int, keyframe_hz: float,
                     first_index: int) -> List[Segment]:
    """Segments whose shortest solved window turns by at least min_rotation_deg.

    Cells solve prefixes of the segment's keyframes; every prefix contains the shortest one.
    """
    kfs = select_keyframes(dataset.frames, keyframe_hz)
    times = np.array([dataset.frames[k].t_ns for k in kfs], dtype=np.int64)
    if times.size == 0:
        return []
    need = max(spec.window_sizes)
    shortest = min(spec.window_sizes)
    length_ns = int(round(spec.segment_length * 1e9))
    stride_ns = int(round(spec.segment_stride * 1e9))
    out = []
    start = int(times[0])
    while start + length_ns <= int(times[-1]):
        sel = (times >= start) & (times < start + length_ns)
        seg_kfs = tuple(int(k) for k, s in zip(kfs, sel) if s)
        if len(seg_kfs) >= need:
            rot = _integrated_rotation_deg(dataset, dataset.frames[seg_kfs[0]].t_ns,
                                           dataset.frames[seg_kfs[shortest - 1]].t_ns)
            if rot >= spec.min_rotation_deg:
                out.append(Segment(first_index + len(out), source, seg_kfs, start * 1e-9))
            else:
                logger.debug("segment at %.1f s skipped: %.1f deg over its first %d keyframes", start * 1e-9, rot,
                             shortest)
        start += stride_ns
    return out


def plan_segments(spec: ExperimentSpec, keyframe_hz: float = 4.0) -> List[Segment]:
    """Segments with enough keyframes and rotation, from the dataset or from seeded scenarios."""
    spec_json = spec.model_dump_json()
    segments: List[Segment] = []
    n_sources = 1 if spec.dataset else MAX_SCENARIOS
    for source in range(n_sources):
        found = _source_segments(_load_source(spec_json, source), spec, source, keyframe_hz, len(segments))
        segments.extend(found)
        if len(segments) >= spec.segments:
            break
        if source == 0 and not found and not spec.dataset:
            # scenario too short or too still for any segment
            break
    if len(segments) < spec.segments:
        logger.warning("only %d of %d requested segments qualify", len(segments), spec.segments)
    return segments[:spec.segments]


def plan_cells(spec: ExperimentSpec, segments: Sequence[Segment]) -> List[Cell]:
    return [Cell(seg, size, float(deform), mode, rep)
            for seg in segments
            for size in spec.window_sizes
            for deform in spec.deformations_deg
            for mode in spec.modes
            for rep in range(spec.repetitions)]


def cell_rng(spec: ExperimentSpec, cell: Cell) -> np.random.Generator:
    # independent of the mode, so every mode sees the same deformation
    return np.random.default_rng([spec.seed, cell.segment.index, cell.window_size,
                                  int(round(cell.deformation_deg * 1000)), cell.repetition])


def _record(cell: Cell, **kw) -> OutcomeRecord:
    return OutcomeRecord(segment=cell.segment.index, window_size=cell.window_size,
                         deformation_deg=cell.deformation_deg, mode=cell.mode,
                         repetition=cell.repetition, **kw)


def run_cell(spec: ExperimentSpec, cell: Cell, solver_cfg: SolverConfig,
             refiner_cfg: Optional[RefinerConfig] = None) -> OutcomeRecord:
    dataset = _load_source(spec.model_dump_json(), cell.segment.source)
    truth = dataset.ground_truth
    if truth is None:
        raise DogeError(f"dataset {dataset.name} has no ground truth to score against")
    cfg = solver_cfg.model_copy(update={"weighting": cell.mode})
    r_init = perturb_rotation(truth.r_ci, cell.deformation_deg, cell_rng(spec, cell))
    init = CalibState(np.zeros(3), r_init)
    idx = list(cell.segment.keyframes[:cell.window_size])

    t0 = time.perf_counter()
    try:
        window = build_window(dataset, idx, init, cfg)
        report = irls_solve(window, init, cfg)
    except DogeError as e:
        logger.info("segment %d size %d deform %.1f %s: %s", cell.segment.index, cell.window_size,
                    cell.deformation_deg, cell.mode, e)
        return _record(cell, success=False, converged=False, classification=DETECTED_BAD, error=str(e),
                       timings={"total": 1e3 * (time.perf_counter() - t0)})
    elapsed = time.perf_counter() - t0

    m = compute_metrics(report.state, truth, window)
    rec = _record(
        cell,
        success=report.success,
        converged=report.converged,
        classification=classify(report.success, m),
        b_g_error=m.b_g_error,
        b_g_error_absolute=m.b_g_error_absolute,
        r_ci_error_deg=m.r_ci_error_deg,
        rel_rot_error_deg=m.rel_rot_error_deg if m.rel_rot_error_deg is not None else float("nan"),
        pass_rate=report.pass_rate,
        mean_rate=mean_angular_rate(window),
        error="" if report.success else report.message,
        timings={
            "reintegration": 1e3 * report.timings["reintegration"],
            "estimation": 1e3 * report.timings["estimation"],
            "total": 1e3 * elapsed,
        },
    )
    if refiner_cfg is not None and report.success:
        rec.refined_r_ci_error_deg = _refine_segment(dataset, cell, report, window, cfg, refiner_cfg)
    return rec


def _refine_segment(dataset: Dataset, cell: Cell, report, window, cfg: SolverConfig,
                    refiner_cfg: RefinerConfig) -> float:
    def windows():
        for idx in iter_windows(dataset, cell.window_size, cell.segment.keyframes, start=1):
            try:
                yield build_window(dataset, idx, report.state, cfg)
            except DogeError:
                yield None

    steps = run_sequence(windows(), report, dataset.noise, refiner_cfg, cfg, dataset.ground_truth, window)
    done = [s for s in steps if s.r_ci_error_deg is not None]
    return float(done[-1].r_ci_error_deg) if done else float("nan")


def _run_cell_job(args) -> OutcomeRecord:
    spec, cell, solver_cfg, refiner_cfg = args
    return run_cell(spec, cell, solver_cfg, refiner_cfg)


def run_sweep(spec: ExperimentSpec, solver_cfg: Optional[SolverConfig] = None,
              refiner_cfg: Optional[RefinerConfig] = None) -> List[OutcomeRecord]:
    solver_cfg = solver_cfg or SolverConfig()
    refiner_cfg = (refiner_cfg or RefinerConfig()) if spec.refine else None
    segments = plan_segments(spec, solver_cfg.keyframe_hz)
    cells = plan_cells(spec, segments)
    logger.info("sweep %s: %d segments, %d cells, %d workers", spec.name, len(segments), len(cells), spec.workers)
    jobs = [(spec, c, solver_cfg, refiner_cfg) for c in cells]
    if spec.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            records = list(pool.map(_run_cell_job, jobs, chunksize=max(1, len(jobs) // (4 * spec.workers))))
    else:
        records = [_run_cell_job(j) for j in jobs]
    return sorted(records, key=lambda r: r.sort_key())


def run_once(cfg: AppConfig, spec: Optional[ExperimentSpec] = None, out_dir: Optional[str] = None,
             quiet: bool = False) -> Dict[str, str]:
    spec = spec or cfg.bench
    records = run_sweep(spec, cfg.solver, cfg.refiner)
    paths = emit_report(records, out_dir or spec.output, spec.model_dump(mode="json"))
    if not quiet:
        print_summary(summarize(records))
    return paths


def report_once(outcomes_path: str, out_dir: str, quiet: bool = False) -> Dict[str, str]:
    """Rebuild the summary tables from an existing outcomes.csv."""
    records = read_outcomes(outcomes_path)
    paths = emit_report(records, out_dir)
    if not quiet:
        print_summary(summarize(records))
    return paths
