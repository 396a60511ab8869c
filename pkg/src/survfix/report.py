"""Report emission: one JSON document plus flat, plot-ready CSV tables."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pandas as pd

from survfix.errors import SurvfixError
from survfix.synth import write_csv

CSV_TABLES = {
    "cox_table.csv": "cox_table",
    "km_groups.csv": "km_groups",
    "expressions.csv": "distillation_table",
    "boundaries.csv": "boundaries",
    "metrics.csv": "metric_table",
    "scatter.csv": "scatter",
}


def to_jsonable(obj):
    """Plain JSON types; NaN and infinities become null."""
    if isinstance(obj, pd.DataFrame):
        return [to_jsonable(r) for r in obj.to_dict(orient="records")]
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def bundle_to_dict(bundle) -> dict:
    return {
        "provenance": bundle.provenance,
        "status": {"ok": bundle.ok, "completed_stages": bundle.completed_stages, "failure": bundle.failure},
        "dataset": bundle.dataset,
        "distillation": {"selected": bundle.distilled, "runs": bundle.distillation_table},
        "cox": {"full": bundle.cox_full, "pruned": bundle.cox_table},
        "stratification": bundle.stratification,
        "boundaries": bundle.boundaries,
        "decision_list": bundle.decision_list,
        "metrics": bundle.metric_table,
        "baselines": bundle.baselines,
    }


def emit_reports(bundle, out_dir: str | Path) -> dict[str, Path]:
    """Write ``report.json`` and every non-empty table as CSV; return the paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        report = out / "report.json"
        report.write_text(json.dumps(to_jsonable(bundle_to_dict(bundle)), indent=1, sort_keys=True, allow_nan=False))
        paths["report.json"] = report
        for filename, attr in CSV_TABLES.items():
            table = getattr(bundle, attr)
            if table is None:
                continue
            write_csv(table, out / filename)
            paths[filename] = out / filename
    except OSError as exc:
        raise SurvfixError(f"cannot write reports to {out}: {exc}") from exc
    return paths


def read_table(path: str | Path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")
