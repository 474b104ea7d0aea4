from __future__ import annotations

import csv
import math
from typing import Callable, Dict, Iterator, List, Sequence, Tuple

import numpy as np

from .errors import DatasetError

LINE_KEY = "_line"


def fmt_float(x) -> str:
    """Shortest text that parses back to the same double."""
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def parse_number(text: str, kind: Callable = float, *, path: str, line: int, column: int, name: str = ""):
    s = (text or "").strip()
    try:
        if kind is int:
            return int(s)
        return float(s)
    except ValueError:
        label = f"{name} " if name else ""
        raise DatasetError(path, f"cannot parse {label}{s!r} as {kind.__name__}", line=line, column=column) from None


def read_numeric_csv(path: str, columns: Sequence[Tuple[str, Callable]], *, min_columns: int = 0,
                     comment: str = "#", has_header: bool = True) -> Dict[str, np.ndarray]:
    """Read a CSV whose leading columns are `columns`; extra trailing columns are ignored.

    Returns one array per column name plus the 1-based file line of each row under
    LINE_KEY. Errors carry 1-based line and column numbers.
    """
    need = min_columns or len(columns)
    out: Dict[str, List] = {name: [] for name, _ in columns}
    rows_at: List[int] = []
    try:
        f = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise DatasetError(path, "file not found") from None
    with f:
        reader = csv.reader(f)
        header_seen = not has_header
        for row in reader:
            line = reader.line_num
            if not row or not "".join(row).strip():
                continue
            if row[0].lstrip().startswith(comment):
                header_seen = True
                continue
            if not header_seen:
                header_seen = True
                try:
                    float(row[0])
                except ValueError:
                    continue  # plain header line
            if len(row) < need:
                raise DatasetError(path, f"expected {need} columns, got {len(row)}", line=line, column=len(row) + 1)
            rows_at.append(line)
            for c, (name, kind) in enumerate(columns):
                if c >= len(row):
                    out[name].append(np.nan)
                    continue
                out[name].append(parse_number(row[c], kind, path=path, line=line, column=c + 1, name=name))
    arrays = {}
    for name, kind in columns:
        arrays[name] = np.array(out[name], dtype=np.int64 if kind is int else float)
    arrays[LINE_KEY] = np.array(rows_at, dtype=np.int64)
    return arrays


def require_increasing(path: str, t_ns: np.ndarray, lines: np.ndarray) -> None:
    """DatasetError at the first row whose timestamp does not exceed the previous one."""
    bad = np.flatnonzero(np.diff(t_ns) <= 0)
    if bad.size:
        raise DatasetError(path, "timestamps must be strictly increasing", line=int(lines[bad[0] + 1]), column=1)


def write_csv(path: str, header: Sequence[str], rows: Iterator[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)


def median_iqr(values) -> Tuple[float, float]:
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=float)
    if v.size == 0:
        return float("nan"), float("nan")
    q1, med, q3 = np.percentile(v, [25.0, 50.0, 75.0])
    return float(med), float(q3 - q1)
