"""Per-iteration trace rows and their CSV form."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

NA = float("nan")

TRACE_COLUMNS = (
    "method", "k", "F_norm", "lambda", "gamma", "n_backtracks", "discrepancy_mismatch",
    "rel_dlambda", "rel_dx", "rel_error_vs_xex", "matvec_A", "matvec_At", "matvec_L",
    "matvec_Lt", "elapsed_seconds",
)


@dataclass
class TraceRow:
    method: str
    k: int
    F_norm: float
    lam: float
    gamma: float
    n_backtracks: int
    discrepancy_mismatch: float
    rel_dlambda: float
    rel_dx: float
    rel_error: float
    matvec_A: int
    matvec_At: int
    matvec_L: int
    matvec_Lt: int
    elapsed_seconds: float

    @property
    def matvecs(self) -> int:
        return self.matvec_A + self.matvec_At + self.matvec_L + self.matvec_Lt

    def as_csv_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        d["rel_error_vs_xex"] = d.pop("rel_error")
        return {c: d[c] for c in TRACE_COLUMNS}


def stopping_metrics(row: TraceRow) -> tuple[float, float, float, float]:
    """``(||F||, |dlambda|/lambda, ||dx||/||x||, ||Ax - b|| - sigma)``; NaN where undefined."""
    return row.F_norm, row.rel_dlambda, row.rel_dx, row.discrepancy_mismatch


def fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return format(v, ".17g")
    return str(v)


def write_trace_csv(path, rows, extra_columns: dict | None = None) -> Path:
    """Write rows (TraceRow or dict) with 17 significant digits."""
    path = Path(path)
    extra_columns = extra_columns or {}
    cols = list(TRACE_COLUMNS) + list(extra_columns)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            d = r.as_csv_dict() if isinstance(r, TraceRow) else dict(r)
            d.update({k: (v(r) if callable(v) else v) for k, v in extra_columns.items()})
            w.writerow([fmt(d[c]) for c in cols])
    return path


def read_trace_csv(path) -> list[TraceRow]:
    rows = []
    ints = {f.name for f in fields(TraceRow) if f.type == "int"}
    with Path(path).open() as fh:
        for rec in csv.DictReader(fh):
            kw = {}
            for f in fields(TraceRow):
                key = {"lam": "lambda", "rel_error": "rel_error_vs_xex"}.get(f.name, f.name)
                raw = rec[key]
                kw[f.name] = raw if f.name == "method" else (int(raw) if f.name in ints else float(raw))
            rows.append(TraceRow(**kw))
    return rows
