import json
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from survfix.data import DatasetManifest
from survfix.errors import StageError, SurvfixError
from survfix.pipeline import STAGES, PipelineConfig, run_pipeline
from survfix.report import CSV_TABLES, emit_reports, read_table


@pytest.fixture(scope="module")
def six_run(six_strata_dir, fast_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    bundle = run_pipeline(DatasetManifest.from_file(six_strata_dir["manifest"]), fast_config, out)
    return bundle, out


def test_stage_order():
    assert STAGES.index("prune") == 5
    assert STAGES[:6] == ("load", "distill", "assemble", "standardize", "fit", "prune")


def test_six_strata_end_to_end(six_run):
    bundle, out = six_run
    assert bundle.ok and bundle.completed_stages == list(STAGES)
    s = bundle.stratification
    assert s["n_groups"] == 6 and s["train"]["all_distinct"]
    assert bundle.distilled["t_stage"]["val_mse"] < 1e-8
    assert {"report.json", *CSV_TABLES} <= {p.name for p in out.iterdir()}


def test_effect_column(six_run):
    table = six_run[0].cox_table
    assert ((table.effect == "protective") == (table.hr < 1)).all()
    assert set(table.effect) <= {"protective", "harmful"}


def test_csv_round_trip(six_run):
    bundle, out = six_run
    for filename, attr in CSV_TABLES.items():
        frame = getattr(bundle, attr)
        back = read_table(out / filename)
        assert list(back.columns) == [str(c) for c in frame.columns]
        for col in frame.columns:
            if pd.api.types.is_numeric_dtype(frame[col]) and not pd.api.types.is_bool_dtype(frame[col]):
                np.testing.assert_allclose(back[col].to_numpy(float), frame[col].to_numpy(float), rtol=1e-9, atol=0)


def test_required_csv_columns(six_run):
    _, out = six_run
    assert list(read_table(out / "cox_table.csv").columns[:6]) == ["name", "hr", "ci_lo", "ci_hi", "p", "effect"]
    assert {"group", "time", "survival", "ci_lo", "ci_hi"} <= set(read_table(out / "km_groups.csv").columns)
    assert {"feature", "depth", "seed", "expression", "train_mse", "test_mse"} <= set(
        read_table(out / "expressions.csv").columns
    )
    b = read_table(out / "boundaries.csv")
    assert b.columns[0] == "k" and list(b.columns[-2:]) == ["intercept", "auroc"]
    assert {"metric", "point", "lo", "hi"} <= set(read_table(out / "metrics.csv").columns)


def test_report_json_is_strict(six_run):
    _, out = six_run
    doc = json.loads((out / "report.json").read_text())
    assert doc["status"]["ok"] is True
    assert doc["provenance"]["config_hash"] == PipelineConfig.from_dict(doc["provenance"]["config"]).config_hash()


def test_stage_files_persisted(six_run):
    _, out = six_run
    names = {p.name for p in (out / "stages").iterdir()}
    assert {"05_cox_table.csv", "06_risk.csv", "06_risk.manifest.json"} <= names


def test_rerun_from_persisted_stage(six_run, tmp_path):
    # the persisted risk table is itself a loadable dataset
    _, out = six_run
    m = DatasetManifest.from_file(out / "stages" / "06_risk.manifest.json")
    cfg = PipelineConfig(distill=False, n_bootstrap=0, tree_baseline=False)
    bundle = run_pipeline(m, cfg, tmp_path)
    assert bundle.cox_table.name.tolist() == ["risk"]


def test_deterministic_across_threads(six_strata_dir, fast_config, six_run, tmp_path):
    _, first = six_run
    run_pipeline(DatasetManifest.from_file(six_strata_dir["manifest"]), fast_config, tmp_path, threads=4)
    for name in ["report.json", *CSV_TABLES]:
        assert (tmp_path / name).read_bytes() == (first / name).read_bytes(), name


def test_noise_aborts_at_prune(noise_dir, tmp_path):
    m = DatasetManifest.from_file(noise_dir["manifest"])
    with pytest.raises(StageError, match="stage 5 'prune'.*no significant features") as info:
        run_pipeline(m, PipelineConfig(distill=False), tmp_path)
    assert info.value.index == 5
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["status"]["completed_stages"] == list(STAGES[:5])
    assert doc["status"]["failure"]["stage"] == "prune"


def test_single_group_report(noise_dir, tmp_path):
    # with an unpruned noise model nothing separates, so one group remains
    m = DatasetManifest.from_file(noise_dir["manifest"])
    bundle = run_pipeline(m, PipelineConfig(distill=False, prune_alpha=1.0, n_bootstrap=0), tmp_path)
    assert bundle.stratification["n_groups"] == 1
    km = read_table(tmp_path / "km_groups.csv")
    assert set(km[km.split == "train"].group) == {1}


def test_train_test_hygiene(six_strata_dir, tmp_path):
    # scrambling test rows must not move anything learned on train rows
    src = six_strata_dir["csv"]
    frame = pd.read_csv(src, dtype=str)
    test = frame.split == "test"
    rng = np.random.default_rng(0)
    for col in ("time", "x0", "x1", "severity", "t_stage"):
        frame.loc[test, col] = rng.permutation(frame.loc[test, col].to_numpy())
    (tmp_path / "alt").mkdir()
    frame.to_csv(tmp_path / "alt" / "six.csv", index=False)
    (tmp_path / "alt" / "six.manifest.json").write_text(six_strata_dir["manifest"].read_text())
    cfg = PipelineConfig(gp_depths=(2,), gp_seeds=1, gp_generations=10, n_bootstrap=0)
    a = run_pipeline(DatasetManifest.from_file(six_strata_dir["manifest"]), cfg, stages=STAGES[:9])
    b = run_pipeline(DatasetManifest.from_file(tmp_path / "alt" / "six.manifest.json"), cfg, stages=STAGES[:9])
    pd.testing.assert_frame_equal(a.cox_table, b.cox_table)
    assert a.stratification["cut_points"] == b.stratification["cut_points"]
    assert a.distilled["t_stage"]["expression"] == b.distilled["t_stage"]["expression"]
    pd.testing.assert_frame_equal(a.boundaries.drop(columns="auroc"), b.boundaries.drop(columns="auroc"))


def test_config_validation(tmp_path):
    with pytest.raises(Exception):
        PipelineConfig.from_dict({"seed": 1, "bogus": 2})
    with pytest.raises(SurvfixError):
        run_pipeline(None, PipelineConfig(), stages=("load", "dance"))
    cfg = PipelineConfig(seed=3)
    assert replace(cfg, seed=3).config_hash() == cfg.config_hash() != PipelineConfig(seed=4).config_hash()


def test_unwritable_output(six_run):
    bundle, _ = six_run
    with pytest.raises(SurvfixError, match="cannot write"):
        emit_reports(bundle, "/proc/forbidden/out")
