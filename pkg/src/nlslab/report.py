"""Report records and the on-disk artifact layout."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

__all__ = ["ReportRecord", "compare_runs", "read_records", "write_artifacts"]


@dataclass(frozen=True)
class ReportRecord:
    """One measured metric with its tolerance and verdict.

    ``comparator`` is ``"le"`` (value <= tolerance), ``"ge"`` or ``"info"``
    (recorded only, always passes).
    """

    experiment: str
    config_hash: str
    metric: str
    value: float
    tolerance: float | None
    comparator: str
    passed: bool

    @classmethod
    def check(cls, experiment: str, chash: str, metric: str, value: float, tolerance: float | None, comparator: str = "le") -> "ReportRecord":
        value = float(value)
        if comparator == "info" or tolerance is None:
            ok = math.isfinite(value) or comparator == "info"
            return cls(experiment, chash, metric, value, tolerance, "info", bool(ok))
        if comparator == "le":
            ok = value <= tolerance
        elif comparator == "ge":
            ok = value >= tolerance
        else:
            raise ValueError(f"unknown comparator {comparator!r}")
        return cls(experiment, chash, metric, value, float(tolerance), comparator, bool(ok and math.isfinite(value)))


def write_artifacts(out_dir: Path, summary: dict, records: Iterable[ReportRecord]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    recs = list(records)
    with (out_dir / "records.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["experiment", "config_hash", "metric", "value", "tolerance", "comparator", "pass"])
        for r in recs:
            tol = "" if r.tolerance is None else repr(r.tolerance)
            w.writerow([r.experiment, r.config_hash, r.metric, repr(r.value), tol, r.comparator, int(r.passed)])
    doc = dict(summary)
    doc["records"] = [asdict(r) for r in recs]
    (out_dir / "summary.json").write_text(json.dumps(doc, indent=1, sort_keys=True, default=_jsonable))


def _jsonable(obj):
    if hasattr(obj, "item"):
        return obj.item()
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def read_records(out_dir: str | Path) -> tuple[str, list[dict]]:
    doc = json.loads((Path(out_dir) / "summary.json").read_text())
    return doc["config_hash"], doc["records"]


def compare_runs(dir_a: str | Path, dir_b: str | Path) -> list[str]:
    """Metrics whose values differ between two runs of the same configuration.

    Raises ``ValueError`` when the runs were produced by different configs.
    """
    ha, ra = read_records(dir_a)
    hb, rb = read_records(dir_b)
    if ha != hb:
        raise ValueError(f"config hashes differ ({ha[:12]} vs {hb[:12]})")
    va = {r["metric"]: r["value"] for r in ra}
    vb = {r["metric"]: r["value"] for r in rb}
    return sorted(k for k in set(va) | set(vb) if repr(va.get(k)) != repr(vb.get(k)))
