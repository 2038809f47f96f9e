"""Report files: ``<name>.csv`` summary, ``<name>.details.csv`` per-instance rows and a
``<name>.json`` header.  Volatile fields (timestamps) live under the header's
``"volatile"`` key so the rest of every file is reproducible byte for byte."""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
from pathlib import Path

from ..evalbench import Report


def _cell(v):
    return repr(float(v)) if isinstance(v, float) else v


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def write_report(report: Report, out_dir, timestamp: bool = True) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / f"{report.name}.csv", "json": out / f"{report.name}.json"}
    paths["csv"].write_text(_csv(report.columns, report.rows))
    if report.details:
        paths["details"] = out / f"{report.name}.details.csv"
        paths["details"].write_text(_csv(report.detail_columns, report.details))
    header = {"name": report.name, "columns": report.columns, "config": report.header}
    if timestamp:
        header["volatile"] = {"timestamp": dt.datetime.now(dt.timezone.utc).isoformat()}
    paths["json"].write_text(json.dumps(header, sort_keys=True, indent=2) + "\n")
    return paths


def _parse_cell(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def read_csv(path) -> tuple[list[str], list[list]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], [[_parse_cell(v) for v in r] for r in rows[1:]]


def read_report(out_dir, name: str) -> Report:
    out = Path(out_dir)
    header = json.loads((out / f"{name}.json").read_text())
    columns, rows = read_csv(out / f"{name}.csv")
    rep = Report(name, header["config"], columns, rows)
    det = out / f"{name}.details.csv"
    if det.exists():
        rep.detail_columns, rep.details = read_csv(det)
    return rep


def stable_json(path) -> dict:
    """Header contents without the volatile block."""
    d = json.loads(Path(path).read_text())
    d.pop("volatile", None)
    return d


def write_log(path, records) -> Path:
    """One JSON object per line: step index, task id, mean cost, loss and eps where present."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    return path
