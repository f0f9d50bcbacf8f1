"""JSON and CSV writers for generation, conformance and benchmark reports."""

from __future__ import annotations

import csv
import json
from pathlib import Path


def write_json(path: Path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n")
    return path


def write_csv(path: Path, rows: list[dict], columns: list[str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, columns, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    return path


def trace_rows(report: dict) -> list[dict]:
    return [dict(r) for r in report.get("trace", [])]


def conformance_rows(report: dict) -> list[dict]:
    return [{k: r[k] for k in ("function", "fmt", "mode", "terms", "total", "mismatches", "passed")}
            for r in report["results"]]


def bench_rows(result: dict) -> list[dict]:
    rows = []
    for g in result["groups"]:
        q = g["quantiles"]
        rows.append({"k": g["k"], "n": g["n"], "seeds": g["seeds"], "success_rate": g["success_rate"],
                     "q10": q[0.1] if 0.1 in q else q["0.1"], "median": g["median_iterations"],
                     "q90": q[0.9] if 0.9 in q else q["0.9"], "bound": g["bound"],
                     "lucky_fraction": g["lucky_fraction"], "lucky_floor": g["lucky_floor"],
                     "passed": g["passed"]})
    return rows
