"""Acceptance suite: one test per headline criterion.

Each test prints a single ``[PASS]`` / ``[FAIL]`` line with the measured
quantities and wall time, then asserts. Run it alone with
``pytest tests/test_acceptance.py -s`` or ``python3 tests/test_acceptance.py``.
"""

import filecmp
import sys
import time
from dataclasses import replace
from itertools import combinations
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

import expr_fixtures as fx
from oracles import cindex_oracle, grid_bisection_root, km_oracle, score_1d_oracle
from survfix import Outcomes
from survfix.cli import main as cli_main
from survfix.cox import cox_score, fit_cox, neg_log_partial_likelihood, predict_risk
from survfix.gp.expr import eval_expr, parse_expr
from survfix.gp.gomea import GpConfig, run_ims
from survfix.metrics import bootstrap_ci, concordance_index
from survfix.stratify import (
    apply_cut_points,
    assemble_decision_list,
    fit_boundary_svm,
    select_group_count,
)
from survfix.survival_stats import kaplan_meier, logrank_two_sample
from survfix.synth import SynthConfig, generate


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail, seconds):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail} ({seconds:.1f} s)")
        return ok

    return emit


# --------------------------------------------------------------------------- expressions


def test_expression_fixtures(report):
    t0 = time.perf_counter()
    texts = {label: text for label, text, _ in fx.ALL}
    worst = 0.0
    for label, row, value in fx.HAND_VALUES:
        worst = max(worst, abs(eval_expr(parse_expr(texts[label]), row) - value))
    rng = np.random.default_rng(0)
    rows = fx.clinical_rows(50, rng)
    for label, text, ref in fx.ALL:
        tree = parse_expr(text)
        worst = max(worst, max(abs(eval_expr(tree, r) - ref(r)) for r in rows))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and dt < 1.0
    report("expression fixtures", ok, f"{len(fx.ALL)} printed expressions, max abs error {worst:.1e}", dt)
    assert ok


# --------------------------------------------------------------------------- Cox


def _tie_free_instance(rng):
    while True:
        n = int(rng.integers(5, 31))
        x = rng.normal(size=n)
        t = rng.exponential(1.0, n) / np.exp(0.7 * x)
        e = rng.random(n) < 0.75
        if e.sum() < 2 or np.unique(t).size < n:
            continue
        root = grid_bisection_root(lambda b: score_1d_oracle(b, x.tolist(), t.tolist(), e.tolist()), n_grid=201)
        if root is not None:  # otherwise the likelihood is monotone and has no finite maximum
            return x, t, e, root


def test_cox_oracle_equivalence(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    beta_err = 0.0
    tie_err = 0.0
    for _ in range(20):
        x, t, e, root = _tie_free_instance(rng)
        frame = pd.DataFrame({"x": x})
        out = Outcomes(t, e)
        fit = fit_cox(frame, out, normalization="none")
        beta_err = max(beta_err, abs(fit.beta[0] - root))
        for b in (-1.0, 0.0, 0.4, root):
            efron = neg_log_partial_likelihood([b], frame, out, ties="efron")
            breslow = neg_log_partial_likelihood([b], frame, out, ties="breslow")
            tie_err = max(tie_err, abs(efron - breslow) / max(1.0, abs(breslow)))
    dt = time.perf_counter() - t0
    ok = beta_err <= 1e-6 and tie_err <= 1e-12 and dt < 10
    report("Cox oracle equivalence", ok, f"max |beta - root| {beta_err:.1e}, max Efron/Breslow gap {tie_err:.1e}", dt)
    assert ok


def test_gradient_check(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(10, 60))
        x = rng.normal(size=(n, 3))
        t = rng.integers(1, 8, n).astype(float)  # heavy ties
        e = rng.random(n) < 0.7
        e[0] = True
        out = Outcomes(t, e)
        beta = rng.normal(0, 0.5, 3)
        g = cox_score(beta, x, out)
        h = 1e-5
        fd = np.array(
            [
                (neg_log_partial_likelihood(beta + h * u, x, out) - neg_log_partial_likelihood(beta - h * u, x, out))
                / (2 * h)
                for u in np.eye(3)
            ]
        )
        worst = max(worst, float(np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-12)))
    dt = time.perf_counter() - t0
    ok = worst < 1e-6 and dt < 10
    report("gradient check", ok, f"max relative error {worst:.1e} over 20 tied instances", dt)
    assert ok


def test_coefficient_recovery(report):
    t0 = time.perf_counter()
    truth = np.array([0.5, -0.5])
    good = 0
    covered = 0
    for seed in range(50):
        ds = generate(SynthConfig(n_subjects=2000, beta_true=tuple(truth), censoring=0.3, rng_seed=seed))
        out = Outcomes(ds.frame.time, ds.frame.event.astype(bool))
        fit = fit_cox(ds.frame[["x0", "x1"]], out, normalization="none")
        lo, hi = np.log(fit.hr_ci_lower), np.log(fit.hr_ci_upper)
        inside = (lo <= truth) & (truth <= hi)
        covered += int(inside.sum())
        good += bool(np.all(np.abs(fit.beta - truth) <= 0.1) and inside.all())
    dt = time.perf_counter() - t0
    ok = good >= 45 and dt < 60
    report(
        "coefficient recovery",
        ok,
        f"{good}/50 replications within +-0.1 and inside their 95% CI; {covered}/100 coefficients covered",
        dt,
    )
    assert ok


# --------------------------------------------------------------------------- KM / log-rank / C-index


def test_km_and_logrank(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    exact = 0
    for _ in range(100):
        n = int(rng.integers(1, 51))
        times = rng.integers(0, 30, n).tolist()
        events = (rng.random(n) < 0.6).tolist()
        km = kaplan_meier(Outcomes(times, events))
        ref = km_oracle(times, events)
        exact += km.times.tolist() == [t for t, _ in ref] and km.survival.tolist() == [s for _, s in ref]
    rejections = 0
    for _ in range(1000):
        ta, tb = rng.exponential(1.0, 100), rng.exponential(1.0, 100)
        ca, cb = rng.exponential(2.0, 100), rng.exponential(2.0, 100)
        a = Outcomes(np.minimum(ta, ca), ta <= ca)
        b = Outcomes(np.minimum(tb, cb), tb <= cb)
        rejections += logrank_two_sample(a, b).p_value < 0.05
    rate = rejections / 1000
    dt = time.perf_counter() - t0
    ok = exact == 100 and 0.03 <= rate <= 0.07 and dt < 60
    report("KM / log-rank oracles", ok, f"KM exact on {exact}/100 cohorts; null rejection rate {rate:.3f}", dt)
    assert ok


def test_cindex_properties(report):
    t0 = time.perf_counter()
    out = Outcomes(np.arange(1.0, 11), np.ones(10, bool))
    perfect = concordance_index(np.arange(10.0, 0, -1), out)
    reverse = concordance_index(np.arange(1.0, 11), out)
    ties = concordance_index(np.zeros(10), out)
    rng = np.random.default_rng(4)
    mismatches = 0
    for _ in range(30):
        n = int(rng.integers(2, 101))
        t = rng.integers(0, 40, n).astype(float)
        r = rng.integers(0, 10, n).astype(float)
        e = np.ones(n, bool)
        try:
            ref = cindex_oracle(r.tolist(), t.tolist(), e.tolist())
        except ZeroDivisionError:
            continue
        mismatches += concordance_index(r, Outcomes(t, e)) != pytest.approx(ref, rel=1e-15, abs=1e-15)
    dt = time.perf_counter() - t0
    ok = (perfect, reverse, ties) == (1.0, 0.0, 0.5) and mismatches == 0 and dt < 5
    report("C-index properties", ok, f"perfect {perfect}, reversed {reverse}, ties {ties}; {mismatches} oracle mismatches", dt)
    assert ok


# --------------------------------------------------------------------------- GP recovery


def _gp_data():
    rng = np.random.default_rng(5)
    n = 250
    return pd.DataFrame(
        {
            "x0": rng.uniform(-2, 2, n),
            "x1": rng.uniform(0.5, 2, n),
            "b0": (rng.random(n) < 0.5).astype(float),
            "b1": (rng.random(n) < 0.5).astype(float),
        }
    )


GP_TARGETS = {
    "x0 + x1": 1,
    "x0 - x1": 1,
    "x0 * x1": 1,
    "x0 / x1": 1,
    "x0 < x1": 1,
    "x0 >= x1": 1,
    "b0 and b1": 1,
    "b0 or b1": 1,
    "not b0": 1,
    "If(b0) Then(x0) Else(x1)": 1,
    "x0": 3,  # identity
}


@pytest.mark.parametrize("text,needed", GP_TARGETS.items(), ids=list(GP_TARGETS))
def test_gp_recovery(report, text, needed):
    data = _gp_data()
    target = np.array([eval_expr(parse_expr(text), r) for r in data.to_dict("records")])
    train, test = data.iloc[:200], data.iloc[200:]
    t0 = time.perf_counter()
    hits = 0
    for seed in range(5):
        res = run_ims(GpConfig(depth=2, rng_seed=0), train, target[:200], test, target[200:], seed_index=seed)
        hits += res.train_mse < 1e-8
    dt = time.perf_counter() - t0
    ok = hits >= needed and dt < 120
    report(f"GP recovery {text!r}", ok, f"{hits}/5 seeds reach MSE < 1e-8 (need {needed})", dt)
    assert ok


# --------------------------------------------------------------------------- stratification


def test_stratification_end_to_end(report):
    t0 = time.perf_counter()
    cfg = SynthConfig(n_subjects=1800, strata=6, strata_ratio=2.0, split_fraction=0.0, rng_seed=0)
    train = generate(cfg)
    test = generate(replace(cfg, rng_seed=1))  # independent held-out cohort
    cols = ["x0", "x1", "severity"]
    out_tr = Outcomes(train.frame.time, train.frame.event.astype(bool))
    out_te = Outcomes(test.frame.time, test.frame.event.astype(bool))
    fit = fit_cox(train.frame[cols], out_tr)
    risk_tr, risk_te = predict_risk(fit, train.frame[cols]), predict_risk(fit, test.frame[cols])
    strat = select_group_count(risk_tr, out_tr, alpha=0.05, n_max=6)
    significant = sum(strat.pairwise_p[i, j] <= strat.corrected_alpha for i, j in combinations(range(6), 2)) if (
        strat.n_groups == 6
    ) else 0
    groups_te = apply_cut_points(risk_te, strat.cut_points)
    c_test = concordance_index(groups_te.astype(float), out_te)
    planes = [fit_boundary_svm(train.frame[cols], strat.labels, k) for k in range(1, strat.n_groups)]
    agreement = float(np.mean(assemble_decision_list(planes).assign(train.frame[cols]) == strat.labels))
    dt = time.perf_counter() - t0
    ok = strat.n_groups == 6 and significant == 15 and c_test > 0.70 and agreement >= 0.9 and dt < 60
    report(
        "stratification end to end",
        ok,
        f"{strat.n_groups} groups, {significant}/15 pairs significant, test group C-index {c_test:.3f}, "
        f"decision-list agreement {agreement:.3f}",
        dt,
    )
    assert ok


# --------------------------------------------------------------------------- determinism


def _tree_identical(a: Path, b: Path) -> list[str]:
    diffs = []
    cmp = filecmp.dircmp(a, b)
    diffs += [str(a / f) for f in cmp.left_only + cmp.right_only]
    for name in cmp.common_files:
        if (a / name).read_bytes() != (b / name).read_bytes():
            diffs.append(name)
    for sub in cmp.common_dirs:
        diffs += _tree_identical(a / sub, b / sub)
    return diffs


def test_determinism(report, six_strata_dir, tmp_path):
    t0 = time.perf_counter()
    manifest = str(six_strata_dir["manifest"])
    codes = [
        cli_main(["pipeline", "--manifest", manifest, "--seed", "11", "--out", str(tmp_path / "a"), "--threads", "1"]),
        cli_main(["pipeline", "--manifest", manifest, "--seed", "11", "--out", str(tmp_path / "b"), "--threads", "4"]),
    ]
    diffs = _tree_identical(tmp_path / "a", tmp_path / "b")
    n_files = sum(1 for p in (tmp_path / "a").rglob("*") if p.is_file())
    dt = time.perf_counter() - t0
    ok = codes == [0, 0] and not diffs and dt < 120
    report("determinism", ok, f"threads 1 vs 4: {n_files} files, {len(diffs)} differ", dt)
    assert ok


# --------------------------------------------------------------------------- bootstrap


def test_bootstrap_contract(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    out = Outcomes(rng.exponential(1.0, 150), rng.random(150) < 0.7)
    risk = rng.normal(size=150)
    a = bootstrap_ci(concordance_index, risk, out, n=1000, seed=3)
    b = bootstrap_ci(concordance_index, risk, out, n=1000, seed=3)
    const = bootstrap_ci(lambda r, o: 0.42, risk, out, n=1000)

    seen = []

    def recording(r, o):
        v = concordance_index(r, o)
        seen.append(v)
        return v

    c = bootstrap_ci(recording, risk, out, n=1000, seed=3)
    resampled = sorted(seen[1:])  # the first call scores the original sample
    order_ok = len(resampled) == 1000 and c.ci_lower == resampled[24] and c.ci_upper == resampled[974]
    dt = time.perf_counter() - t0
    ok = a == b and const.ci_lower == const.point == const.ci_upper == 0.42 and order_ok and dt < 10
    report(
        "bootstrap contract",
        ok,
        f"reproducible {a == b}; constant interval {const.ci_lower}..{const.ci_upper}; "
        f"endpoints = order statistics 25/975: {order_ok}",
        dt,
    )
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
