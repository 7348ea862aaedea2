"""Deterministic serialization of reports: CSV tables, JSON summaries, series files."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .lab import CSV_COLUMNS, ConvergenceReport, LdpReport

SERIES_METRICS = ("S_eps", "I_eps", "L1_f", "L1_g", "gap_to_S0", "max_violation")


def fmt(x) -> str:
    """Shortest round-trip text for a number (at most 17 significant digits)."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x + 0.0)


def jsonable(obj):
    """Convert numpy values and non-finite floats into plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else fmt(x)
    return obj


def write_text(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def write_csv(path: Path, header, rows) -> Path:
    lines = [",".join(header)]
    lines += [",".join(fmt(v) if not isinstance(v, str) else v for v in row) for row in rows]
    return write_text(path, "\n".join(lines) + "\n")


def write_json(path: Path, obj) -> Path:
    return write_text(path, json.dumps(jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def convergence_table(report: ConvergenceReport, extra=()):
    header = list(CSV_COLUMNS) + list(extra)
    rows = []
    for r in report.rows:
        values = [getattr(r, c) for c in CSV_COLUMNS]
        for name in extra:
            side, stat = name.split("_")
            vec = getattr(r, side)
            values.append(float(vec.min() if stat == "min" else vec.max()))
        rows.append(values)
    return header, rows


def ldp_table(report: LdpReport):
    header = ["eps", "log_mass", "rate", "target", "gap"]
    rows = [[r.eps, r.log_mass, r.rate, report.target, r.gap] for r in report.rows]
    return header, rows


def _series(path: Path, xs, ys) -> Path:
    return write_text(path, "".join(f"{fmt(x)} {fmt(y)}\n" for x, y in zip(xs, ys)))


def emit_plot_data(report, directory) -> list[Path]:
    """Two-column ``log10(eps) value`` text files, one per tracked metric (gnuplot-ready)."""
    rows = getattr(report, "rows", None)
    if not rows:
        raise ValueError("report has no rows")
    directory = Path(directory)
    xs = [math.log10(r.eps) for r in rows]
    if isinstance(report, ConvergenceReport):
        return [_series(directory / f"{m}.dat", xs, [getattr(r, m) for r in rows]) for m in SERIES_METRICS]
    if isinstance(report, LdpReport):
        return [_series(directory / "rate_vs_target.dat", xs, [r.rate for r in rows])]
    # multimarginal rows: duck-typed on their attribute names
    metrics = [m for m in ("dual", "gap_to_exact", "max_residual") if hasattr(rows[0], m)]
    return [_series(directory / f"{m}.dat", xs, [getattr(r, m) for r in rows]) for m in metrics]
