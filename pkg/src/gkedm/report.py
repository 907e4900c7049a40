"""Summary tables and per-epoch logs for training reports."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

from .datasets import atomic_write_text
from .pipeline import TrainReport

SUMMARY_COLUMNS = ("model", "dataset", "params_M", "baseline_metric", "method", "alpha", "final_metric", "improvement", "seed")
_FLOATS = {"params_M", "baseline_metric", "alpha", "final_metric", "improvement"}


def summary_row(rep: TrainReport) -> dict:
    return {
        "model": rep.model,
        "dataset": rep.dataset,
        "params_M": rep.param_count / 1e6,
        "baseline_metric": rep.baseline_metric,
        "method": rep.method,
        "alpha": rep.alpha,
        "final_metric": rep.test_metric,
        "improvement": rep.improvement,
        "seed": rep.seed,
    }


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def report_emit(reports: Sequence[TrainReport] | Sequence[dict], path, fmt: str = "csv") -> None:
    """Write one summary row per report as CSV or JSON."""
    if not reports:
        raise ValueError("report_emit needs at least one report")
    rows = [r if isinstance(r, dict) else summary_row(r) for r in reports]
    if fmt == "csv":
        text = rows_to_csv(rows, SUMMARY_COLUMNS)
    elif fmt == "json":
        text = json.dumps([{c: r.get(c) for c in SUMMARY_COLUMNS} for r in rows], indent=2) + "\n"
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    atomic_write_text(path, text)


def read_summary(path) -> list[dict]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        return json.loads(text)
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        rec: dict = {}
        for c in SUMMARY_COLUMNS:
            v = row.get(c, "")
            if c in _FLOATS:
                rec[c] = float(v) if v != "" else None
            elif c == "seed":
                rec[c] = int(v)
            else:
                rec[c] = v
        out.append(rec)
    return out


def epoch_csv(rep: TrainReport) -> str:
    """Per-epoch log; loss-component columns are the union over rows in first-seen order."""
    cols = ["epoch", "train_loss", "val_metric"]
    for r in rep.rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    if len(cols) == 3:
        cols.append("L_CE")
    return rows_to_csv(rep.rows, cols)


def report_json(rep: TrainReport, include_timing: bool = False) -> str:
    d = rep.to_dict(include_timing)
    d["summary"] = summary_row(rep)
    return json.dumps(d, indent=2, sort_keys=True) + "\n"


def load_report_json(path) -> TrainReport:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    d.pop("summary", None)
    return TrainReport(**d)
