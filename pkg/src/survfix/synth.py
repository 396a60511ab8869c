"""Synthetic survival cohorts from a Weibull proportional-hazards model."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from survfix.errors import SurvfixError
from survfix.gp.expr import ExprTree, Node, evaluate, parse_expr


@dataclass(frozen=True)
class CovariateSpec:
    name: str
    dist: str = "normal"  # normal | uniform | bernoulli
    a: float = 0.0  # mean / low / probability
    b: float = 1.0  # sd / high

    def sample(self, rng, n: int) -> np.ndarray:
        if self.dist == "normal":
            return rng.normal(self.a, self.b, n)
        if self.dist == "uniform":
            return rng.uniform(self.a, self.b, n)
        if self.dist == "bernoulli":
            return (rng.random(n) < self.a).astype(float)
        raise SurvfixError(f"unknown covariate distribution {self.dist!r}")


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 1000
    weibull_shape: float = 1.5
    weibull_scale: float = 1000.0
    beta_true: tuple[float, ...] = (0.5, -0.5)
    covariates: tuple[CovariateSpec, ...] = ()
    censoring: float = 0.3
    strata: int | None = None
    strata_ratio: float = 2.0
    strata_feature_noise: float = 0.4
    time_resolution: float | None = None
    split_fraction: float = 0.3
    teachers: tuple[tuple[str, str], ...] = ()  # (column name, expression over covariates)
    teacher_noise: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not (self.weibull_shape > 0 and self.weibull_scale > 0):
            raise SurvfixError("Weibull shape and scale must be positive")
        if not 0.0 <= self.censoring <= 0.9:
            raise SurvfixError(f"infeasible censoring target {self.censoring}: must lie in [0, 0.9]")
        if self.covariates and len(self.covariates) != len(self.beta_true):
            raise SurvfixError("one covariate spec per coefficient is required")
        if self.strata is not None and self.strata < 1:
            raise SurvfixError("strata must be positive")
        object.__setattr__(self, "beta_true", tuple(float(b) for b in self.beta_true))
        object.__setattr__(
            self, "covariates", tuple(c if isinstance(c, CovariateSpec) else CovariateSpec(**c) for c in self.covariates)
        )

    @property
    def covariate_specs(self) -> tuple[CovariateSpec, ...]:
        if self.covariates:
            return self.covariates
        return tuple(CovariateSpec(f"x{i}") for i in range(len(self.beta_true)))

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        d["covariates"] = tuple(CovariateSpec(**c) for c in d.get("covariates", ()))
        if "beta_true" in d:
            d["beta_true"] = tuple(d["beta_true"])
        teachers = d.get("teachers", ())
        if isinstance(teachers, dict):
            teachers = teachers.items()
        d["teachers"] = tuple((str(k), str(v)) for k, v in teachers)
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthDataset:
    frame: pd.DataFrame
    true_risk: np.ndarray
    strata: np.ndarray | None
    censored_fraction: float
    config: SynthConfig
    feature_columns: list[str] = field(default_factory=list)


def _calibrate_censoring(event_time: np.ndarray, unit_exp: np.ndarray, target: float) -> np.ndarray:
    """Exponential censoring times ``unit_exp / rate`` with the rate set by bisection."""
    if target == 0.0:
        return np.full(event_time.size, np.inf)

    def frac(log_rate):
        return float(np.mean(unit_exp / np.exp(log_rate) < event_time))

    lo, hi = -60.0, 60.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if frac(mid) < target:
            lo = mid
        else:
            hi = mid
    # the realised fraction is a step function of the rate; take the closer side
    best = min((lo, hi), key=lambda r: abs(frac(r) - target))
    if abs(frac(best) - target) > 0.05:
        raise SurvfixError(f"infeasible censoring target {target}: best achievable {frac(best):.3f}")
    return unit_exp / np.exp(best)


def generate(config: SynthConfig) -> SynthDataset:
    """Draw a cohort: Weibull event times with hazard ``h0(t) exp(beta . x)``."""
    rng = np.random.default_rng(config.rng_seed)
    n = config.n_subjects
    specs = config.covariate_specs
    x = np.column_stack([s.sample(rng, n) for s in specs]) if specs else np.empty((n, 0))
    risk = x @ np.asarray(config.beta_true) if specs else np.zeros(n)
    cols = {s.name: x[:, i] for i, s in enumerate(specs)}
    feature_columns = [s.name for s in specs]

    strata = None
    if config.strata:
        strata = (np.arange(n) * config.strata // n)[rng.permutation(n)]
        risk = risk + strata * np.log(config.strata_ratio)
        noise = config.strata_feature_noise
        cols["severity"] = strata + rng.uniform(-noise, noise, n)
        feature_columns.append("severity")

    u = rng.random(n)
    event_time = config.weibull_scale * (-np.log(u) / np.exp(risk)) ** (1.0 / config.weibull_shape)
    censor_time = _calibrate_censoring(event_time, rng.exponential(1.0, n), config.censoring)
    time = np.minimum(event_time, censor_time)
    event = event_time <= censor_time
    if config.time_resolution:
        time = np.ceil(time / config.time_resolution) * config.time_resolution

    split = np.where(rng.random(n) < config.split_fraction, "test", "train")
    teacher_cols = {}
    for name, text in config.teachers:
        teacher_cols[name] = synth_teacher(parse_expr(text), pd.DataFrame(cols), config.teacher_noise, rng)
    frame = pd.DataFrame(
        {"id": np.arange(n), "time": time, "event": event.astype(int), **cols, **teacher_cols, "split": split}
    )
    if strata is not None:
        frame["stratum"] = strata
    return SynthDataset(frame, risk, strata, float(1.0 - event.mean()), config, feature_columns)


def synth_teacher(expression: ExprTree | Node, data: pd.DataFrame, noise_sd: float = 0.0, rng=None) -> np.ndarray:
    """Planted teacher column: the expression's value plus Gaussian noise."""
    values = evaluate(expression, data)
    if noise_sd > 0:
        rng = np.random.default_rng(rng)
        values = values + rng.normal(0.0, noise_sd, values.size)
    return values


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(frame: pd.DataFrame, path: Path) -> None:
    """CSV with shortest round-trip float formatting (byte-stable per input)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(frame.columns)
        for row in frame.itertuples(index=False):
            writer.writerow([_cell(v) for v in row])


def write_dataset(ds: SynthDataset, out_dir: str | Path, name: str = "synth") -> dict[str, Path]:
    """Write ``<name>.csv``, the ground-truth sidecar and a matching manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{name}.csv"
    write_csv(ds.frame, csv_path)
    sidecar = {
        "beta_true": list(ds.config.beta_true),
        "true_risk": [float(r) for r in ds.true_risk],
        "strata": None if ds.strata is None else [int(s) for s in ds.strata],
        "censored_fraction": ds.censored_fraction,
        "config": ds.config.to_dict(),
    }
    sidecar_path = out / f"{name}.truth.json"
    sidecar_path.write_text(json.dumps(sidecar, indent=1, sort_keys=True))
    teachers = [name for name, _ in ds.config.teachers]
    manifest = {
        "csv_path": csv_path.name,
        "id_column": "id",
        "time_column": "time",
        "event_column": "event",
        "feature_columns": [{"name": c, "kind": "numeric"} for c in ds.feature_columns],
        "teacher_columns": teachers,
        "split_column": "split",
    }
    manifest_path = out / f"{name}.manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1))
    return {"csv": csv_path, "truth": sidecar_path, "manifest": manifest_path}
