import json
import subprocess

import pytest

from survfix.cli import main
from survfix.report import read_table

FAST = {"gp_depths": [2], "gp_seeds": 1, "gp_generations": 10, "n_bootstrap": 20}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "synth.json").write_text(json.dumps({"strata": 4, "teachers": {"t": "0.5 * x0 + severity"}}))
    (root / "fast.json").write_text(json.dumps(FAST))
    assert main(["synth", "--config", str(root / "synth.json"), "--n-subjects", "600", "--seed", "2",
                 "--out", str(root / "data")]) == 0
    return root


def args(root, command, out, *extra):
    return [command, "--manifest", str(root / "data" / "synth.manifest.json"), "--config", str(root / "fast.json"),
            "--out", str(root / out), *extra]


def test_synth_outputs(workdir):
    names = {p.name for p in (workdir / "data").iterdir()}
    assert names == {"synth.csv", "synth.truth.json", "synth.manifest.json"}
    assert read_table(workdir / "data" / "synth.csv").shape[0] == 600


def test_pipeline(workdir, capsys):
    assert main(args(workdir, "pipeline", "full")) == 0
    text = capsys.readouterr().out
    assert "groups:" in text and "cindex_risk" in text
    assert (workdir / "full" / "report.json").exists()


@pytest.mark.parametrize("command,expected", [
    ("fit-cox", "cox_table.csv"),
    ("distill", "expressions.csv"),
    ("stratify", "boundaries.csv"),
    ("evaluate", "metrics.csv"),
])
def test_single_steps(workdir, command, expected):
    assert main(args(workdir, command, command)) == 0
    assert (workdir / command / expected).exists()


def test_km(workdir, capsys):
    assert main(args(workdir, "km", "km", "--group", "stratum")) == 0
    assert "4 groups" in capsys.readouterr().out
    km = read_table(workdir / "km" / "km_groups.csv")
    assert sorted(km.group.unique()) == [0, 1, 2, 3]
    p = read_table(workdir / "km" / "pairwise_logrank.csv")
    assert p.shape == (4, 5)


def test_seed_override_changes_provenance(workdir):
    assert main(args(workdir, "fit-cox", "s7", "--seed", "7")) == 0
    doc = json.loads((workdir / "s7" / "report.json").read_text())
    assert doc["provenance"]["seed"] == 7


def test_stage_tagged_failure(tmp_path, capsys):
    assert main(["synth", "--n-subjects", "300", "--out", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "synth.manifest.json").read_text())
    manifest["feature_columns"] = [{"name": "nothing_here"}]
    (tmp_path / "bad.json").write_text(json.dumps(manifest))
    code = main(["fit-cox", "--manifest", str(tmp_path / "bad.json"), "--out", str(tmp_path / "o")])
    assert code == 1
    assert "stage 0 'load' failed" in capsys.readouterr().err


def test_missing_manifest(tmp_path, capsys):
    assert main(["pipeline", "--manifest", str(tmp_path / "none.json")]) == 1
    assert capsys.readouterr().err.startswith("error: pipeline:")


def test_invalid_config(workdir, tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"gp_seeds": "five"}))
    code = main(["fit-cox", "--manifest", str(workdir / "data" / "synth.manifest.json"), "--config",
                 str(tmp_path / "c.json"), "--out", str(tmp_path / "o")])
    assert code == 1 and "error" in capsys.readouterr().err


def test_console_script(tmp_path):
    res = subprocess.run(["survfix", "synth", "--n-subjects", "50", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "wrote 50 subjects" in res.stdout
