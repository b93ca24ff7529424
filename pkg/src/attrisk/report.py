"""Reading and writing risk reports.

A report is a header-bearing CSV file with one row per record plus a JSON
sidecar holding the run metadata. Full joint arrays can be dumped as one
CSV file per record.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping, Sequence

from .errors import SchemaError
from .risk import RiskReport, RiskResult, report_rows

REPORT_NAME = "risk_report.csv"
METADATA_NAME = "risk_report.json"
JOINT_DIR = "joint"


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    return format(float(value), ".17g")


def report_columns(variables: Sequence[str]) -> list[str]:
    cols = ["record", "truth_prob", "truth_rank"]
    for v in variables:
        cols += [f"marginal_{v}", f"abs_diff_{v}", f"null_abs_diff_{v}"]
    return cols


def metadata_path(report_path) -> Path:
    return Path(report_path).with_suffix(".json")


def write_report(report: RiskReport, path) -> Path:
    """Write the per-record table to ``path`` and the metadata next to it."""
    path = Path(path)
    cols = report_columns(report.metadata["variables"])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for row in report_rows(report):
            writer.writerow([_fmt(row[c]) for c in cols])
    write_json(report.metadata, metadata_path(path))
    return path


def write_json(obj: Mapping, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_report(path) -> tuple[list[dict], dict]:
    """Return (rows, metadata) from a report file and its sidecar."""
    path = Path(path)
    meta_path = metadata_path(path)
    if not path.exists():
        raise SchemaError(f"report file not found: {path}")
    if not meta_path.exists():
        raise SchemaError(f"report metadata not found: {meta_path}")
    try:
        metadata = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{meta_path}: malformed JSON ({exc.msg})") from None
    for key in ("variables", "uniform_prior", "marginal_uniform_prior", "G"):
        if key not in metadata:
            raise SchemaError(f"{meta_path}: missing field {key!r}")
    cols = report_columns(metadata["variables"])
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or any(c not in reader.fieldnames for c in cols):
            raise SchemaError(f"{path}: header does not match the report layout")
        for n, rec in enumerate(reader, start=1):
            try:
                row = {c: float(rec[c]) for c in cols}
            except (TypeError, ValueError):
                raise SchemaError(f"{path}: corrupt value at row {n}") from None
            row["record"] = int(row["record"])
            row["truth_rank"] = int(row["truth_rank"])
            rows.append(row)
    return rows, metadata


def write_joint(result: RiskResult, path, levels: Mapping[str, Sequence[str]] | None = None) -> None:
    """Flattened (C-order) joint array of one record.

    One column per variable, then a truth flag and the probability.
    Categorical cells are written as labels when ``levels`` names them.
    """
    grid = result.grid
    cells = grid.cells()
    flat = result.joint.reshape(-1)
    levels = levels or {}

    def cell(v, value):
        if v in levels:
            return levels[v][int(value) - 1]
        return _fmt(value.item())

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(grid.variables) + ["is_truth", "probability"])
        truth = grid.truth_flat
        for c in range(grid.size):
            writer.writerow([cell(v, cells[v][c]) for v in grid.variables] + [int(c == truth), _fmt(flat[c])])


def joint_filename(record: int) -> str:
    return f"record_{record:06d}.csv"
