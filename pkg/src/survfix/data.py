"""Dataset manifests, clinical-variable encodings and CSV loading."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import jsonschema
import numpy as np
import pandas as pd

from survfix.errors import SurvfixError
from survfix.outcomes import Outcomes

log = logging.getLogger(__name__)

ENCODINGS: dict[str, dict[str, float]] = {
    "smoking": {"non-smoker": 1, "ex-smoker": 0, "current smoker": -1, "current": -1},
    "hpv": {"positive": 1, "unknown": 0, "negative": -1},
    "tnm_stage": {"0": 0, "I": 1, "II": 2, "III": 3, "IVA": 4, "IVB": 5},
}

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["csv_path", "time_column", "event_column"],
    "properties": {
        "csv_path": {"type": "string"},
        "id_column": {"type": ["string", "null"]},
        "time_column": {"type": "string"},
        "event_column": {"type": "string"},
        "feature_columns": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name"],
                "properties": {
                    "name": {"type": "string"},
                    "kind": {"enum": ["numeric", "ordinal", "categorical"]},
                    "encoding": {"type": ["object", "string", "null"]},
                    "minmax": {"type": "boolean"},
                },
                "additionalProperties": False,
            },
        },
        "teacher_columns": {"type": "array", "items": {"type": "string"}},
        "split_column": {"type": ["string", "null"]},
        "split_fraction": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "split_seed": {"type": "integer"},
        "stage_column": {"type": ["string", "null"]},
    },
    "additionalProperties": False,
}


@dataclass
class ColumnSpec:
    name: str
    kind: str = "numeric"
    encoding: dict[str, float] | None = None
    minmax: bool = False

    def __post_init__(self):
        if isinstance(self.encoding, str):
            if self.encoding not in ENCODINGS:
                raise SurvfixError(f"unknown encoding preset {self.encoding!r}")
            self.encoding = ENCODINGS[self.encoding]
        if self.kind in ("ordinal", "categorical") and not self.encoding:
            raise SurvfixError(f"column {self.name!r} of kind {self.kind} needs an encoding map")


@dataclass
class DatasetManifest:
    csv_path: str
    time_column: str
    event_column: str
    id_column: str | None = None
    feature_columns: list[ColumnSpec] = field(default_factory=list)
    teacher_columns: list[str] = field(default_factory=list)
    split_column: str | None = None
    split_fraction: float | None = None
    split_seed: int = 0
    stage_column: str | None = None
    base_dir: Path | None = None

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | Path | None = None) -> "DatasetManifest":
        jsonschema.validate(d, MANIFEST_SCHEMA)
        d = dict(d)
        d["feature_columns"] = [ColumnSpec(**c) for c in d.get("feature_columns", [])]
        return cls(**d, base_dir=Path(base_dir) if base_dir is not None else None)

    @classmethod
    def from_file(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base_dir=path.parent)

    def to_dict(self) -> dict:
        return {
            "csv_path": self.csv_path,
            "id_column": self.id_column,
            "time_column": self.time_column,
            "event_column": self.event_column,
            "feature_columns": [
                {"name": c.name, "kind": c.kind, "encoding": c.encoding, "minmax": c.minmax} for c in self.feature_columns
            ],
            "teacher_columns": list(self.teacher_columns),
            "split_column": self.split_column,
            "split_fraction": self.split_fraction,
            "split_seed": self.split_seed,
            "stage_column": self.stage_column,
        }

    @property
    def resolved_csv(self) -> Path:
        p = Path(self.csv_path)
        if not p.is_absolute() and self.base_dir is not None:
            p = self.base_dir / p
        return p

    @property
    def feature_names(self) -> list[str]:
        return [c.name for c in self.feature_columns]


@dataclass
class LoadedDataset:
    features: pd.DataFrame
    outcomes: Outcomes
    teachers: pd.DataFrame
    is_test: np.ndarray
    ids: np.ndarray
    stage: np.ndarray | None
    rows_in: int
    rows_dropped: int
    minmax_params: dict[str, tuple[float, float]] = field(default_factory=dict)
    extras: pd.DataFrame | None = None

    @property
    def rows_used(self) -> int:
        return len(self.outcomes)

    def part(self, test: bool) -> tuple[pd.DataFrame, Outcomes, pd.DataFrame]:
        mask = self.is_test if test else ~self.is_test
        return (
            self.features[mask].reset_index(drop=True),
            self.outcomes[mask],
            self.teachers[mask].reset_index(drop=True),
        )


def _to_float(values: pd.Series) -> pd.Series:
    # float() is correctly rounded; pd.to_numeric can be off by one ulp
    def conv(v):
        try:
            return float(v)
        except (TypeError, ValueError):
            return np.nan

    return values.map(conv).astype(float)


def encode_column(values: pd.Series, spec: ColumnSpec) -> np.ndarray:
    if spec.kind == "numeric" and not spec.encoding:
        out = _to_float(values)
        bad = values[out.isna() & values.notna()]
        if len(bad):
            raise SurvfixError(f"non-numeric value {bad.iloc[0]!r} in column {spec.name!r}")
        return out.to_numpy(dtype=float)
    mapping = {str(k).strip(): float(v) for k, v in spec.encoding.items()}
    out = np.empty(len(values))
    for i, v in enumerate(values):
        key = str(v).strip()
        if key not in mapping:
            # numeric-looking values may be stored as "1.0" for an "1" key
            try:
                alt = str(int(float(key)))
            except ValueError:
                alt = None
            if alt is None or alt not in mapping:
                raise SurvfixError(f"unmapped category {key!r} in column {spec.name!r}")
            key = alt
        out[i] = mapping[key]
    return out


def load_dataset(manifest: DatasetManifest, extra_columns: Sequence[str] = ()) -> LoadedDataset:
    """Read, clean and encode the manifest's CSV.

    Rows missing any used column are dropped and counted. Min-max scaling of
    flagged numeric columns uses training rows only. ``extra_columns`` are
    carried along unparsed (e.g. a grouping column).
    """
    path = manifest.resolved_csv
    raw = pd.read_csv(path, dtype=str, keep_default_na=True, encoding="utf-8")
    used = [manifest.time_column, manifest.event_column, *manifest.feature_names, *manifest.teacher_columns]
    for extra in (manifest.id_column, manifest.split_column, manifest.stage_column):
        if extra:
            used.append(extra)
    used.extend(c for c in extra_columns if c not in used)
    missing_cols = [c for c in used if c not in raw.columns]
    if missing_cols:
        raise SurvfixError(f"column {missing_cols[0]!r} not found in {path.name}")
    rows_in = len(raw)
    clean = raw.dropna(subset=used).reset_index(drop=True)
    dropped = rows_in - len(clean)
    if dropped:
        log.info("dropped %d of %d rows with missing values", dropped, rows_in)

    time = _to_float(clean[manifest.time_column])
    if time.isna().any():
        bad = clean[manifest.time_column][time.isna()].iloc[0]
        raise SurvfixError(f"non-numeric time {bad!r} in column {manifest.time_column!r}")
    event = _to_float(clean[manifest.event_column])
    if event.isna().any() or not event.isin([0, 1]).all():
        raise SurvfixError(f"event column {manifest.event_column!r} must hold 0/1")
    outcomes = Outcomes(time.to_numpy(dtype=float), event.to_numpy().astype(int).astype(bool))

    if manifest.split_column:
        s = clean[manifest.split_column].astype(str).str.strip().str.lower()
        is_test = s.isin(["test", "1", "true"]).to_numpy()
    elif manifest.split_fraction:
        rng = np.random.default_rng(manifest.split_seed)
        n_test = int(round(manifest.split_fraction * len(clean)))
        is_test = np.zeros(len(clean), dtype=bool)
        is_test[rng.permutation(len(clean))[:n_test]] = True
    else:
        is_test = np.zeros(len(clean), dtype=bool)

    features = {}
    minmax_params = {}
    for spec in manifest.feature_columns:
        col = encode_column(clean[spec.name], spec)
        if spec.minmax:
            ref = col[~is_test] if np.any(~is_test) else col
            lo, hi = float(ref.min()), float(ref.max())
            if hi == lo:
                raise SurvfixError(f"cannot min-max scale constant column {spec.name!r}")
            col = (col - lo) / (hi - lo)
            minmax_params[spec.name] = (lo, hi - lo)
        features[spec.name] = col
    teachers = {}
    for name in manifest.teacher_columns:
        teachers[name] = encode_column(clean[name], ColumnSpec(name))

    stage = None
    if manifest.stage_column:
        stage = encode_column(clean[manifest.stage_column], ColumnSpec(manifest.stage_column, "ordinal", "tnm_stage"))
    ids = clean[manifest.id_column].to_numpy() if manifest.id_column else np.arange(len(clean))
    return LoadedDataset(
        features=pd.DataFrame(features),
        outcomes=outcomes,
        teachers=pd.DataFrame(teachers, index=range(len(clean))),
        is_test=is_test,
        ids=ids,
        stage=stage,
        rows_in=rows_in,
        rows_dropped=dropped,
        minmax_params=minmax_params,
        extras=clean[list(extra_columns)].copy() if extra_columns else None,
    )
