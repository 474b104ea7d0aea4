"""Report channels: deterministic CSV/JSON sweep reports, timing tables, refine series, console."""
from __future__ import annotations

import csv
import json
import logging
import os
from collections import OrderedDict
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np

from ..errors import ReportError
from ..scoring import CLASSES, DETECTED_BAD, GOOD, NON_DETECTED_BAD, OutcomeRecord
from ..utils import fmt_float, median_iqr

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
OUTCOME_COLUMNS = [
    "segment", "window_size", "deformation_deg", "mode", "repetition", "success", "converged",
    "classification", "b_g_error", "b_g_error_absolute", "r_ci_error_deg", "rel_rot_error_deg",
    "pass_rate", "mean_rate", "refined_r_ci_error_deg", "error",
]
SUMMARY_COLUMNS = [
    "window_size", "deformation_deg", "mode", "n",
    "b_g_error_median", "b_g_error_iqr", "r_ci_error_deg_median", "r_ci_error_deg_iqr",
    "rel_rot_error_deg_median", "rel_rot_error_deg_iqr",
    "good_pct", "detected_bad_pct", "non_detected_bad_pct",
]
TIMING_COLUMNS = ["window_size", "deformation_deg", "mode", "n", "reintegration_ms", "estimation_ms", "total_ms"]


def _cell(value: Any) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return fmt_float(value)
    return str(value)


def _json_value(v: Any) -> Any:
    if isinstance(v, float) and not np.isfinite(v):
        return None
    return v


def _group(records: Iterable[OutcomeRecord]) -> "OrderedDict[tuple, List[OutcomeRecord]]":
    groups: Dict[tuple, List[OutcomeRecord]] = {}
    for r in records:
        groups.setdefault(r.cell, []).append(r)
    return OrderedDict(sorted(groups.items(), key=lambda kv: kv[0]))


def summarize(records: Sequence[OutcomeRecord]) -> List[Dict[str, Any]]:
    """Per-cell aggregates (window size x deformation x mode)."""
    out = []
    for (size, deform, mode), rs in _group(records).items():
        n = len(rs)
        counts = {c: sum(1 for r in rs if r.classification == c) for c in CLASSES}
        b_med, b_iqr = median_iqr(r.b_g_error for r in rs)
        e_med, e_iqr = median_iqr(r.r_ci_error_deg for r in rs)
        g_med, g_iqr = median_iqr(r.rel_rot_error_deg for r in rs)
        out.append({
            "window_size": size,
            "deformation_deg": float(deform),
            "mode": mode,
            "n": n,
            "b_g_error_median": b_med,
            "b_g_error_iqr": b_iqr,
            "r_ci_error_deg_median": e_med,
            "r_ci_error_deg_iqr": e_iqr,
            "rel_rot_error_deg_median": g_med,
            "rel_rot_error_deg_iqr": g_iqr,
            "good_pct": 100.0 * counts[GOOD] / n,
            "detected_bad_pct": 100.0 * counts[DETECTED_BAD] / n,
            "non_detected_bad_pct": 100.0 * counts[NON_DETECTED_BAD] / n,
        })
    return out


def timing_summary(records: Sequence[OutcomeRecord]) -> List[Dict[str, Any]]:
    out = []
    for (size, deform, mode), rs in _group(records).items():
        def mean(key):
            vals = [r.timings.get(key) for r in rs if key in r.timings]
            return float(np.mean(vals)) if vals else float("nan")
        out.append({"window_size": size, "deformation_deg": float(deform), "mode": mode, "n": len(rs),
                    "reintegration_ms": mean("reintegration"), "estimation_ms": mean("estimation"),
                    "total_ms": mean("total")})
    return out


def _write_table(path: str, columns: Sequence[str], rows: Iterable[Dict[str, Any]]) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            f.write(f"# schema_version={SCHEMA_VERSION}\n")
            w = csv.writer(f, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_cell(row.get(c)) for c in columns])
    except OSError as e:
        raise ReportError(path, f"cannot write: {e.strerror or e}") from None


def emit_report(records: Sequence[OutcomeRecord], folder: str, spec: Dict[str, Any] = None) -> Dict[str, str]:
    """Write outcomes.csv, summary.csv, summary.json (deterministic) and timing.csv."""
    if not records:
        raise ReportError(folder, "no outcome records to report")
    try:
        os.makedirs(folder, exist_ok=True)
    except OSError as e:
        raise ReportError(folder, f"cannot create directory: {e.strerror or e}") from None
    records = sorted(records, key=lambda r: r.sort_key())
    summary = summarize(records)
    paths = {
        "outcomes": os.path.join(folder, "outcomes.csv"),
        "summary": os.path.join(folder, "summary.csv"),
        "summary_json": os.path.join(folder, "summary.json"),
        "timing": os.path.join(folder, "timing.csv"),
    }
    _write_table(paths["outcomes"], OUTCOME_COLUMNS, (r.row() for r in records))
    _write_table(paths["summary"], SUMMARY_COLUMNS, summary)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "spec": spec or {},
        "records": len(records),
        "cells": [{k: _json_value(v) for k, v in cell.items()} for cell in summary],
    }
    try:
        with open(paths["summary_json"], "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2, sort_keys=False, allow_nan=False)
            f.write("\n")
    except OSError as e:
        raise ReportError(paths["summary_json"], f"cannot write: {e.strerror or e}") from None
    _write_table(paths["timing"], TIMING_COLUMNS, timing_summary(records))
    logger.info("wrote %d outcome rows and %d summary cells to %s", len(records), len(summary), folder)
    return paths


def _parse_bool(s: str) -> bool:
    return s.strip().lower() in ("1", "true", "yes")


def read_outcomes(path: str) -> List[OutcomeRecord]:
    try:
        f = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise ReportError(path, "file not found") from None
    with f:
        lines = [ln for ln in f if not ln.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        out.append(OutcomeRecord(
            segment=int(row["segment"]),
            window_size=int(row["window_size"]),
            deformation_deg=float(row["deformation_deg"]),
            mode=row["mode"],
            repetition=int(row["repetition"]),
            success=_parse_bool(row["success"]),
            converged=_parse_bool(row["converged"]),
            classification=row["classification"],
            b_g_error=float(row["b_g_error"]),
            b_g_error_absolute=_parse_bool(row["b_g_error_absolute"]),
            r_ci_error_deg=float(row["r_ci_error_deg"]),
            rel_rot_error_deg=float(row["rel_rot_error_deg"]),
            pass_rate=float(row["pass_rate"]),
            mean_rate=float(row["mean_rate"]),
            refined_r_ci_error_deg=float(row["refined_r_ci_error_deg"]),
            error=row.get("error", ""),
        ))
    return out


REFINE_COLUMNS = ["window", "t", "bgx", "bgy", "bgz", "r_ci_error_deg", "b_g_error",
                  "var0", "var1", "var2", "var3", "var4", "var5", "pairs", "parallax_deg", "handoff", "skipped"]


def write_refine_csv(rows: Iterable[Dict[str, Any]], path: str) -> None:
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    _write_table(path, REFINE_COLUMNS, ({k: ("" if v is None else v) for k, v in r.items()} for r in rows))


def write_json(doc: Dict[str, Any], path: str) -> None:
    folder = os.path.dirname(path)
    try:
        if folder:
            os.makedirs(folder, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=2)
            f.write("\n")
    except OSError as e:
        raise ReportError(path, f"cannot write: {e.strerror or e}") from None


def print_summary(summary: Sequence[Dict[str, Any]]) -> None:
    print(f"{'KFs':>4} {'deform':>7} {'mode':>9} {'n':>5} {'bg med%':>9} {'Rci med':>9} "
          f"{'good%':>7} {'det%':>7} {'nondet%':>8}")
    for c in summary:
        print(f"{c['window_size']:>4} {c['deformation_deg']:>7.1f} {c['mode']:>9} {c['n']:>5} "
              f"{c['b_g_error_median']:>9.3f} {c['r_ci_error_deg_median']:>9.4f} "
              f"{c['good_pct']:>7.2f} {c['detected_bad_pct']:>7.2f} {c['non_detected_bad_pct']:>8.2f}")
    print("-" * 72)
