"""End-to-end run: distill, fit, prune, stratify, evaluate.

Every stage writes its outputs under ``<out>/stages`` as plain CSV/JSON, so a
stage can be rerun alone through the matching CLI subcommand (the assembled
feature table and the risk table come with their own manifests).
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import jsonschema
import numpy as np
import pandas as pd
import scipy

import survfix
from survfix.cox import CoxFit, fit_cox, predict_risk, prune_refit, standardize
from survfix.data import DatasetManifest, LoadedDataset, load_dataset
from survfix.errors import StageError, SurvfixError
from survfix.gp import GpConfig, distill_feature, evaluate, expr_mse
from survfix.metrics import TWO_YEARS, MetricResult, auc_at_horizon, bootstrap_ci, concordance_index
from survfix.outcomes import Outcomes
from survfix.stratify import (
    StratificationResult,
    apply_cut_points,
    assemble_decision_list,
    fit_boundary_svm,
    fit_survival_tree,
    select_group_count,
    summarize_groups,
    tnm_stratify,
)
from survfix.synth import write_csv

log = logging.getLogger(__name__)

STAGES = (
    "load",
    "distill",
    "assemble",
    "standardize",
    "fit",
    "prune",
    "predict",
    "stratify",
    "boundaries",
    "metrics",
    "baselines",
)


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    distill: bool = True
    distill_teachers: tuple[str, ...] | None = None  # None: every teacher column
    gp_depths: tuple[int, ...] = (2, 3, 4)
    gp_seeds: int = 5
    gp_generations: int = 512
    gp_base_population: int = 64
    gp_linkage: str = "univariate"
    distill_depth: int | None = None  # None: depth with the lowest validation MSE
    distill_validation: float = 0.3
    cox_inputs: str = "auto"  # auto | teachers | features | both
    normalization: str = "zscore"
    prune_alpha: float = 0.05
    strat_alpha: float = 0.05
    max_groups: int = 6
    consecutive_only: bool = False
    horizon: float = TWO_YEARS
    n_bootstrap: int = 1000
    svm_C: float = 1.0
    svm_max_iter: int = 100_000
    tnm_baseline: bool = True
    tree_baseline: bool = True
    tree_min_leaf: int = 30
    tree_max_leaves: int = 6

    def __post_init__(self):
        for name in ("gp_depths", "distill_teachers"):
            v = getattr(self, name)
            if v is not None and not isinstance(v, tuple):
                object.__setattr__(self, name, tuple(v))
        jsonschema.validate(self.to_dict(), CONFIG_SCHEMA)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        jsonschema.validate(d, CONFIG_SCHEMA)
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    @property
    def gp(self) -> GpConfig:
        return GpConfig(
            generations=self.gp_generations,
            base_population=self.gp_base_population,
            seeds=self.gp_seeds,
            rng_seed=self.seed,
            linkage=self.gp_linkage,
        )


CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "distill": {"type": "boolean"},
        "distill_teachers": {"type": ["array", "null"], "items": {"type": "string"}},
        "gp_depths": {"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": 5}, "minItems": 1},
        "gp_seeds": {"type": "integer", "minimum": 1},
        "gp_generations": {"type": "integer", "minimum": 1},
        "gp_base_population": {"type": "integer", "minimum": 2},
        "gp_linkage": {"enum": ["univariate", "random_tree"]},
        "distill_depth": {"type": ["integer", "null"]},
        "distill_validation": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "cox_inputs": {"enum": ["auto", "teachers", "features", "both"]},
        "normalization": {"enum": ["zscore", "minmax", "none"]},
        "prune_alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "strat_alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "max_groups": {"type": "integer", "minimum": 2},
        "consecutive_only": {"type": "boolean"},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "n_bootstrap": {"type": "integer", "minimum": 0},
        "svm_C": {"type": "number", "exclusiveMinimum": 0},
        "svm_max_iter": {"type": "integer", "minimum": 1},
        "tnm_baseline": {"type": "boolean"},
        "tree_baseline": {"type": "boolean"},
        "tree_min_leaf": {"type": "integer", "minimum": 1},
        "tree_max_leaves": {"type": "integer", "minimum": 2},
    },
}
assert set(CONFIG_SCHEMA["properties"]) == {f.name for f in fields(PipelineConfig)}


@dataclass
class ReportBundle:
    provenance: dict
    dataset: dict = field(default_factory=dict)
    distillation_table: pd.DataFrame | None = None
    distilled: dict = field(default_factory=dict)
    scatter: pd.DataFrame | None = None
    cox_full: pd.DataFrame | None = None
    cox_table: pd.DataFrame | None = None
    stratification: dict = field(default_factory=dict)
    km_groups: pd.DataFrame | None = None
    boundaries: pd.DataFrame | None = None
    decision_list: dict = field(default_factory=dict)
    metric_table: pd.DataFrame | None = None
    baselines: dict = field(default_factory=dict)
    completed_stages: list[str] = field(default_factory=list)
    failure: dict | None = None

    @property
    def ok(self) -> bool:
        return self.failure is None


def provenance(config: PipelineConfig, manifest: DatasetManifest) -> dict:
    """Hashes and versions; deliberately free of paths, timestamps and thread counts."""
    csv_hash = hashlib.sha256(manifest.resolved_csv.read_bytes()).hexdigest()
    return {
        "config_hash": config.config_hash(),
        "config": config.to_dict(),
        "seed": config.seed,
        "dataset_sha256": csv_hash,
        "manifest": {k: v for k, v in manifest.to_dict().items() if k != "csv_path"},
        "versions": {
            "survfix": survfix.__version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
        },
    }


@dataclass
class _State:
    data: LoadedDataset | None = None
    x_train: pd.DataFrame | None = None
    x_test: pd.DataFrame | None = None
    x_all: pd.DataFrame | None = None
    distilled_values: dict[str, np.ndarray] = field(default_factory=dict)
    full_fit: CoxFit | None = None
    fit: CoxFit | None = None
    risk_train: np.ndarray | None = None
    risk_test: np.ndarray | None = None
    strat: StratificationResult | None = None
    labels_test: np.ndarray | None = None


def _split_frame(df: pd.DataFrame, mask: np.ndarray) -> pd.DataFrame:
    return df[mask].reset_index(drop=True)


def _metric_row(name: str, split: str, res: MetricResult | None, note: str = "") -> dict:
    if res is None:
        return {"metric": name, "split": split, "point": np.nan, "lo": np.nan, "hi": np.nan, "n_bootstrap": 0, "note": note}
    return {
        "metric": name,
        "split": split,
        "point": res.point,
        "lo": res.ci_lower,
        "hi": res.ci_upper,
        "n_bootstrap": res.n_bootstrap,
        "note": note,
    }


def _safe_metric(fn: Callable[[], MetricResult]) -> tuple[MetricResult | None, str]:
    try:
        return fn(), ""
    except SurvfixError as exc:
        log.warning("metric unavailable: %s", exc)
        return None, str(exc)


def _strat_summary(res: StratificationResult, outcomes: Outcomes) -> dict:
    sizes = [int(np.sum(res.labels == g)) for g in range(1, res.n_groups + 1)]
    return {
        "n_groups": res.n_groups,
        "group_sizes": sizes,
        "group_events": [int(outcomes[res.labels == g].n_events) for g in range(1, res.n_groups + 1)],
        "all_distinct": bool(res.all_distinct),
        "corrected_alpha": res.corrected_alpha,
        "pairwise_p": res.pairwise_p.tolist(),
        "median_survival": [km.median for km in res.km_per_group],
    }


class _Runner:
    def __init__(self, manifest: DatasetManifest, config: PipelineConfig, out_dir: Path | None, threads: int):
        self.manifest = manifest
        self.config = config
        self.threads = max(1, int(threads))
        self.stage_dir = None if out_dir is None else Path(out_dir) / "stages"
        if self.stage_dir is not None:
            self.stage_dir.mkdir(parents=True, exist_ok=True)
        self.bundle = ReportBundle(provenance(config, manifest))
        self.s = _State()

    # persistence helpers
    def _csv(self, name: str, frame: pd.DataFrame) -> None:
        if self.stage_dir is not None:
            write_csv(frame, self.stage_dir / name)

    def _json(self, name: str, obj) -> None:
        if self.stage_dir is not None:
            from survfix.report import to_jsonable

            (self.stage_dir / name).write_text(json.dumps(to_jsonable(obj), indent=1, sort_keys=True))

    def _table(self, features: pd.DataFrame, extra: dict) -> pd.DataFrame:
        d = self.s.data
        base = pd.DataFrame(
            {
                "id": d.ids,
                "time": d.outcomes.time,
                "event": d.outcomes.event.astype(int),
                "split": np.where(d.is_test, "test", "train"),
            }
        )
        return pd.concat([base, features.reset_index(drop=True), pd.DataFrame(extra)], axis=1)

    def _manifest(self, name: str, csv_name: str, columns: list[str]) -> None:
        if self.stage_dir is None:
            return
        m = {
            "csv_path": csv_name,
            "id_column": "id",
            "time_column": "time",
            "event_column": "event",
            "feature_columns": [{"name": c, "kind": "numeric"} for c in columns],
            "split_column": "split",
        }
        (self.stage_dir / name).write_text(json.dumps(m, indent=1))

    # stages
    def load(self):
        d = load_dataset(self.manifest)
        if not self.manifest.feature_columns and not self.manifest.teacher_columns:
            raise SurvfixError("manifest names no feature or teacher columns")
        if len(d.outcomes) == 0:
            raise SurvfixError("no rows left after dropping missing values")
        self.s.data = d
        self.bundle.dataset = {
            "rows_in": d.rows_in,
            "rows_used": d.rows_used,
            "rows_dropped_missing": d.rows_dropped,
            "n_train": int(np.sum(~d.is_test)),
            "n_test": int(np.sum(d.is_test)),
            "events_train": int(d.outcomes[~d.is_test].n_events),
            "events_test": int(d.outcomes[d.is_test].n_events),
            "minmax_params": d.minmax_params,
        }
        self._json("00_load.json", self.bundle.dataset)

    def _teachers_to_distill(self) -> list[str]:
        cfg, d = self.config, self.s.data
        if not cfg.distill or not self.manifest.teacher_columns:
            return []
        names = list(cfg.distill_teachers) if cfg.distill_teachers is not None else list(self.manifest.teacher_columns)
        unknown = [n for n in names if n not in d.teachers.columns]
        if unknown:
            raise SurvfixError(f"unknown teacher column {unknown[0]!r}")
        if names and d.features.shape[1] == 0:
            raise SurvfixError("distillation needs at least one feature column")
        return names

    def distill(self):
        cfg, d = self.config, self.s.data
        names = self._teachers_to_distill()
        if not names:
            return
        train_idx = np.nonzero(~d.is_test)[0]
        rng = np.random.default_rng([cfg.seed, 1])
        perm = train_idx[rng.permutation(train_idx.size)]
        n_val = int(round(cfg.distill_validation * perm.size))
        val_idx, fit_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
        if fit_idx.size == 0 or val_idx.size == 0:
            raise SurvfixError("too few training rows to hold out a validation split")
        test_idx = np.nonzero(d.is_test)[0]
        feats = d.features
        frames, scatter = [], []
        for name in names:
            target = d.teachers[name].to_numpy(dtype=float)
            report = distill_feature(
                feats.iloc[fit_idx].reset_index(drop=True),
                target[fit_idx],
                feats.iloc[val_idx].reset_index(drop=True),
                target[val_idx],
                depths=cfg.gp_depths,
                seeds=cfg.gp_seeds,
                config=cfg.gp,
                threads=self.threads,
            )
            frame = report.to_frame(name).rename(columns={"test_mse": "val_mse"})
            frame["test_mse"] = [
                expr_mse(r.expression, feats.iloc[test_idx], target[test_idx]) if test_idx.size else np.nan
                for r in report.runs
            ]
            if cfg.distill_depth is not None:
                if cfg.distill_depth not in report.best:
                    raise SurvfixError(f"distill_depth {cfg.distill_depth} not among searched depths")
                chosen = report.best[cfg.distill_depth]
            else:
                chosen = min(report.best.values(), key=lambda r: (r.test_mse, r.depth))
            frame["chosen"] = [r is chosen for r in report.runs]
            frames.append(frame)
            values = evaluate(chosen.expression, feats)
            self.s.distilled_values[name] = values
            self.bundle.distilled[name] = {
                "depth": chosen.depth,
                "seed": chosen.seed,
                "expression": chosen.text(3),
                "expression_exact": chosen.text(None),
                "train_mse": chosen.train_mse,
                "val_mse": chosen.test_mse,
                "test_mse": float(frame.loc[frame["chosen"], "test_mse"].iloc[0]),
            }
            scatter.append(
                pd.DataFrame(
                    {
                        "feature": name,
                        "id": d.ids,
                        "split": np.where(d.is_test, "test", "train"),
                        "teacher": target,
                        "distilled": values,
                    }
                )
            )
        self.bundle.distillation_table = pd.concat(frames, ignore_index=True)
        self.bundle.scatter = pd.concat(scatter, ignore_index=True)
        self._csv("01_expressions.csv", self.bundle.distillation_table)

    def assemble(self):
        cfg, d = self.config, self.s.data
        teachers = d.teachers.copy()
        for name, values in self.s.distilled_values.items():
            teachers[name] = values
        mode = cfg.cox_inputs
        if mode == "auto":
            mode = "teachers" if teachers.shape[1] else "features"
        parts = {"teachers": [teachers], "features": [d.features], "both": [d.features, teachers]}[mode]
        table = pd.concat([p.reset_index(drop=True) for p in parts], axis=1)
        if table.shape[1] == 0:
            raise SurvfixError(f"cox_inputs={cfg.cox_inputs!r} selects no columns")
        if len(set(table.columns)) != table.shape[1]:
            raise SurvfixError("feature and teacher column names overlap")
        self.s.x_train = _split_frame(table, ~d.is_test)
        self.s.x_test = _split_frame(table, d.is_test)
        self.s.x_all = table
        self._csv("02_assembled.csv", self._table(table, {}))
        self._manifest("02_assembled.manifest.json", "02_assembled.csv", list(table.columns))

    def standardize(self):
        _, params = standardize(self.s.x_train, self.config.normalization)
        self._json("03_standardize.json", params)

    def fit(self):
        d = self.s.data
        self.s.full_fit = fit_cox(self.s.x_train, d.outcomes[~d.is_test], normalization=self.config.normalization)
        self.bundle.cox_full = self.s.full_fit.to_frame()
        self._csv("04_cox_full.csv", self.bundle.cox_full)

    def prune(self):
        d = self.s.data
        self.s.fit = prune_refit(self.s.full_fit, self.s.x_train, d.outcomes[~d.is_test], self.config.prune_alpha)
        self.bundle.cox_table = self.s.fit.to_frame()
        self._csv("05_cox_table.csv", self.bundle.cox_table)

    def predict(self):
        risk = predict_risk(self.s.fit, self.s.x_all)
        d = self.s.data
        self.s.risk_train, self.s.risk_test = risk[~d.is_test], risk[d.is_test]
        self._csv("06_risk.csv", self._table(pd.DataFrame(index=range(len(risk))), {"risk": risk}))
        self._manifest("06_risk.manifest.json", "06_risk.csv", ["risk"])

    def stratify(self):
        cfg, d = self.config, self.s.data
        train_out, test_out = d.outcomes[~d.is_test], d.outcomes[d.is_test]
        strat = select_group_count(
            self.s.risk_train,
            train_out,
            alpha=cfg.strat_alpha,
            n_max=cfg.max_groups,
            consecutive=cfg.consecutive_only,
            horizon=cfg.horizon,
        )
        self.s.strat = strat
        summary = {
            "significant": bool(strat.significant),
            "n_groups": strat.n_groups,
            "cut_points": strat.cut_points.tolist(),
            "candidates": {str(k): v for k, v in strat.candidates.items()},
            "train": _strat_summary(strat, train_out),
        }
        km = strat.km_frame()
        km.insert(0, "split", "train")
        kms = [km]
        labels_test = apply_cut_points(self.s.risk_test, strat.cut_points) if len(test_out) else np.empty(0, int)
        self.s.labels_test = labels_test
        if len(test_out):
            present = set(labels_test.tolist())
            if present == set(range(1, strat.n_groups + 1)):
                test_res = summarize_groups(labels_test, test_out, cfg.strat_alpha, cfg.consecutive_only, cfg.horizon)
                summary["test"] = _strat_summary(test_res, test_out)
                km_t = test_res.km_frame()
                km_t.insert(0, "split", "test")
                kms.append(km_t)
            else:
                summary["test"] = {"note": "some groups are empty on the test split"}
        self.bundle.stratification = summary
        self.bundle.km_groups = pd.concat(kms, ignore_index=True)
        self._json("07_stratification.json", summary)
        groups = np.zeros(len(d.outcomes), dtype=int)
        groups[~d.is_test], groups[d.is_test] = strat.labels, labels_test
        self._csv("07_groups.csv", pd.DataFrame({"id": d.ids, "split": np.where(d.is_test, "test", "train"), "group": groups}))

    def boundaries(self):
        cfg, strat = self.config, self.s.strat
        names = self.s.fit.feature_names
        if strat.n_groups < 2:
            self.bundle.boundaries = pd.DataFrame(columns=["k", *[f"w_{n}" for n in names], "intercept", "auroc"])
            self.bundle.decision_list = {"n_groups": 1, "rules": "else: group 1"}
            return
        x_tr, x_te = self.s.x_train[names], self.s.x_test[names]
        have_test = len(x_te) > 0
        planes = [
            fit_boundary_svm(
                x_tr,
                strat.labels,
                k,
                test_features=x_te if have_test else None,
                test_labels=self.s.labels_test if have_test else None,
                C=cfg.svm_C,
                max_iter=cfg.svm_max_iter,
                seed=cfg.seed,
            )
            for k in range(1, strat.n_groups)
        ]
        dl = assemble_decision_list(planes)
        rows = []
        for b in planes:
            row = {"k": b.boundary_index}
            row.update({f"w_{n}": w for n, w in zip(names, b.weights)})
            row.update({"intercept": b.intercept, "auroc": b.test_auroc})
            rows.append(row)
        self.bundle.boundaries = pd.DataFrame(rows)
        info = {
            "n_groups": dl.n_groups,
            "rules": dl.render(),
            "agreement_train": float(np.mean(dl.assign(x_tr) == strat.labels)),
        }
        if have_test:
            info["agreement_test"] = float(np.mean(dl.assign(x_te) == self.s.labels_test))
        self.bundle.decision_list = info
        self._csv("08_boundaries.csv", self.bundle.boundaries)
        self._json("08_decision_list.json", info)

    def _boot(self, metric, risks, outcomes, **kw) -> MetricResult:
        fn = (lambda r, o: metric(r, o, **kw)) if kw else metric
        cfg = self.config
        if cfg.n_bootstrap == 0:
            p = fn(np.asarray(risks, dtype=float), outcomes)
            return MetricResult(p, p, p)
        return bootstrap_ci(fn, risks, outcomes, n=cfg.n_bootstrap, seed=cfg.seed, threads=self.threads)

    def _score_pair(self, prefix: str, scores, outcomes: Outcomes, split: str) -> list[dict]:
        c, c_note = _safe_metric(lambda: self._boot(concordance_index, scores, outcomes))
        a, a_note = _safe_metric(lambda: self._boot(auc_at_horizon, scores, outcomes, horizon=self.config.horizon))
        return [_metric_row(f"cindex_{prefix}", split, c, c_note), _metric_row(f"auc_{prefix}", split, a, a_note)]

    def _eval_split(self) -> tuple[np.ndarray, str]:
        d = self.s.data
        return (d.is_test, "test") if d.is_test.any() else (~d.is_test, "train")

    def metrics(self):
        d = self.s.data
        mask, split = self._eval_split()
        out = d.outcomes[mask]
        risk = self.s.risk_test if split == "test" else self.s.risk_train
        groups = self.s.labels_test if split == "test" else self.s.strat.labels
        rows = self._score_pair("risk", risk, out, split)
        if self.s.strat.n_groups >= 2:
            rows += self._score_pair("groups", groups.astype(float), out, split)
        self.bundle.metric_table = pd.DataFrame(rows)
        self._csv("09_metrics.csv", self.bundle.metric_table)

    def baselines(self):
        cfg, d = self.config, self.s.data
        mask, split = self._eval_split()
        out = d.outcomes[mask]
        rows = []
        if cfg.tnm_baseline and d.stage is not None:
            labels = tnm_stratify(d.stage[mask])
            rows += self._score_pair("tnm", d.stage[mask], out, split)
            self.bundle.baselines["tnm"] = {"n_groups": int(labels.max())}
        if cfg.tree_baseline:
            train_out = d.outcomes[~d.is_test]
            try:
                tree = fit_survival_tree(
                    self.s.x_train, train_out, min_leaf=cfg.tree_min_leaf, max_leaves=cfg.tree_max_leaves
                )
            except SurvfixError as exc:
                self.bundle.baselines["survival_tree"] = {"note": str(exc)}
            else:
                x_eval = self.s.x_test if split == "test" else self.s.x_train
                groups = tree.predict(x_eval).astype(float)
                self.bundle.baselines["survival_tree"] = {"n_leaves": tree.n_leaves}
                if tree.n_leaves >= 2:
                    rows += self._score_pair("tree", groups, out, split)
        if rows:
            self.bundle.metric_table = pd.concat([self.bundle.metric_table, pd.DataFrame(rows)], ignore_index=True)
        self._json("10_baselines.json", self.bundle.baselines)

    def run(self, stages: tuple[str, ...] = STAGES) -> ReportBundle:
        for i, name in enumerate(STAGES):
            if name not in stages:
                continue
            try:
                getattr(self, name)()
            except Exception as exc:
                log.error("stage %d %s failed: %s", i, name, exc)
                self.bundle.failure = {"stage": name, "index": i, "error": str(exc), "type": type(exc).__name__}
                raise StageError(name, exc, index=i, bundle=self.bundle) from exc
            self.bundle.completed_stages.append(name)
        return self.bundle


def run_pipeline(
    manifest: DatasetManifest,
    config: PipelineConfig = PipelineConfig(),
    out_dir: str | Path | None = None,
    threads: int = 1,
    stages: tuple[str, ...] = STAGES,
) -> ReportBundle:
    """Run the stages in order; on failure emit the partial bundle and raise :class:`StageError`.

    ``threads`` only spreads independent work (GP seeds, bootstrap resamples)
    and never changes the result. ``stages`` selects a subset, e.g. the Cox
    fit alone; skipped stages leave their part of the bundle empty.
    """
    from survfix.report import emit_reports

    unknown = set(stages) - set(STAGES)
    if unknown:
        raise SurvfixError(f"unknown stage {sorted(unknown)[0]!r}")
    runner = _Runner(manifest, config, None if out_dir is None else Path(out_dir), threads)
    try:
        bundle = runner.run(tuple(stages))
    except StageError:
        if out_dir is not None:
            emit_reports(runner.bundle, out_dir)
        raise
    if out_dir is not None:
        emit_reports(bundle, out_dir)
    return bundle


def with_seed(config: PipelineConfig, seed: int | None) -> PipelineConfig:
    return config if seed is None else replace(config, seed=seed)
