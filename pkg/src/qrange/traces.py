"""Trace CSV and sidecar-metadata serialization.

One CSV row per step with reals at 9 significant digits, plus a
`<path>.meta.json` sidecar carrying the full run configuration, oracle
results and a schema tag.  A run is reproducible from its sidecar alone.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path

from .lab import ExperimentSpec, RunResult, TraceRecord

SCHEMA = "qrange-trace-v1"
CSV_HEADER = ["step", "loss", "theta_min", "theta_max", "s", "z", "enc_a", "enc_b", "clamp_event"]


def _fmt(v: float) -> str:
    return format(v, ".9g")


def write_trace_csv(result: RunResult, path: str | Path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for r in result.trace:
            fh.write(
                f"{r.step},{_fmt(r.loss)},{_fmt(r.theta_min)},{_fmt(r.theta_max)},"
                f"{_fmt(r.s)},{_fmt(r.z)},{_fmt(r.enc_a)},{_fmt(r.enc_b)},{int(r.clamp_event)}\n"
            )
    meta = {
        "schema": SCHEMA,
        "spec": dataclasses.asdict(result.spec),
        "oracle": None,
        "final_mse": result.final_mse,
        "diverged": result.diverged,
        "label": result.label,
    }
    if math.isfinite(result.oracle_mse):
        meta["oracle"] = {
            "theta_min": result.oracle_range[0],
            "theta_max": result.oracle_range[1],
            "mse": result.oracle_mse,
        }
    with open(meta_path(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def meta_path(path: str | Path) -> Path:
    return Path(str(path) + ".meta.json")


def read_trace_csv(path: str | Path) -> tuple[list[TraceRecord], dict | None]:
    path = Path(path)
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected trace header: {header}")
        for row in reader:
            records.append(TraceRecord(
                step=int(row[0]),
                loss=float(row[1]),
                theta_min=float(row[2]),
                theta_max=float(row[3]),
                s=float(row[4]),
                z=float(row[5]),
                enc_a=float(row[6]),
                enc_b=float(row[7]),
                clamp_event=bool(int(row[8])),
            ))
    meta = None
    mpath = meta_path(path)
    if mpath.exists():
        with open(mpath) as fh:
            meta = json.load(fh)
    return records, meta


def spec_from_meta(meta: dict) -> ExperimentSpec:
    return ExperimentSpec(**meta["spec"])
