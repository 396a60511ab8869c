import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from survfix import Outcomes
from survfix.errors import DegenerateTestError, SurvfixError
from survfix.metrics import concordance_index
from survfix.stratify import (
    BoundaryHyperplane,
    DecisionList,
    apply_cut_points,
    assemble_decision_list,
    assign_group,
    cut_points,
    fit_boundary_svm,
    fit_survival_tree,
    quantile_stratify,
    select_group_count,
    summarize_groups,
    tnm_stratify,
)
from survfix.synth import SynthConfig, generate


@pytest.fixture(scope="module")
def six_strata():
    ds = generate(SynthConfig(n_subjects=1800, beta_true=(), strata=6, censoring=0.3, rng_seed=0))
    out = Outcomes(ds.frame.time, ds.frame.event.astype(bool))
    return ds, out


class TestQuantile:
    def test_halves(self):
        assert quantile_stratify(np.arange(1, 11), 2).tolist() == [1] * 5 + [2] * 5

    def test_one_per_group(self):
        assert quantile_stratify([3.0, 1, 2, 6, 5, 4], 6).tolist() == [3, 1, 2, 6, 5, 4]

    def test_earlier_bin_takes_extra(self):
        assert np.bincount(quantile_stratify(np.arange(7), 2))[1:].tolist() == [4, 3]

    def test_ties_keep_order(self):
        assert quantile_stratify([1.0, 1, 1, 1], 2).tolist() == [1, 1, 2, 2]

    def test_errors(self):
        with pytest.raises(SurvfixError):
            quantile_stratify([1.0, 2.0], 3)
        with pytest.raises(SurvfixError):
            quantile_stratify([1.0, 2.0], 1)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(-50, 50), min_size=6, max_size=60), st.integers(2, 6))
    def test_sizes_order_and_monotone_invariance(self, risks, n):
        r = np.asarray(risks, dtype=float)
        labels = quantile_stratify(r, n)
        sizes = np.bincount(labels)[1:]
        assert sizes.max() - sizes.min() <= 1
        means = [r[labels == g].mean() for g in range(1, n + 1)]
        assert all(a <= b for a, b in zip(means, means[1:]))
        assert quantile_stratify(np.exp(r / 10) * 5 - 2, n).tolist() == labels.tolist()

    def test_cut_points_reproduce_labels(self):
        r = np.random.default_rng(0).normal(size=60)
        labels = quantile_stratify(r, 4)
        assert apply_cut_points(r, cut_points(r, labels)).tolist() == labels.tolist()


class TestSelectGroupCount:
    def test_two_populations(self):
        rng = np.random.default_rng(1)
        g = np.repeat([0, 1], 200)
        t = rng.exponential(1.0, 400) / np.where(g == 1, 10.0, 1.0)
        res = select_group_count(g.astype(float), Outcomes(t, np.ones(400, bool)))
        assert res.n_groups >= 2 and res.all_distinct and res.significant

    def test_identical_outcomes_flagged(self):
        out = Outcomes(np.full(40, 5.0), np.ones(40, bool))
        res = select_group_count(np.arange(40.0), out)
        assert res.n_groups == 1 and not res.significant
        assert (res.labels == 1).all()

    def test_no_events(self):
        with pytest.raises(DegenerateTestError):
            select_group_count([1.0, 2.0], Outcomes([1.0, 2.0], [False, False]))

    def test_six_strata(self, six_strata):
        ds, out = six_strata
        res = select_group_count(ds.strata.astype(float) + 1e-9 * np.arange(ds.strata.size), out)
        assert res.n_groups == 6 and res.all_distinct
        assert res.pairwise.n_tests == 15
        assert all(res.pairwise_p[i, j] <= res.corrected_alpha for i, j in res.pairwise.pairs)

    def test_deterministic(self, six_strata):
        ds, out = six_strata
        a = select_group_count(ds.true_risk, out)
        b = select_group_count(ds.true_risk, out)
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.pairwise_p, b.pairwise_p)

    def test_km_ordering_and_beats_two_groups(self, six_strata):
        ds, out = six_strata
        res = select_group_count(ds.true_risk, out, n_bootstrap=0)
        grid = np.linspace(0, np.quantile(out.time, 0.8), 50)
        curves = [(km.survival_at(grid), km) for km in res.km_per_group]
        for (s_hi, km_a), (s_lo, km_b) in zip(curves, curves[1:]):
            bad = s_hi < s_lo - 1e-12
            if bad.any():
                # a violation is tolerated only inside overlapping bands
                up = np.interp(grid, km_a.times, km_a.ci_upper)
                lo = np.interp(grid, km_b.times, km_b.ci_lower)
                assert np.all(up[bad] >= lo[bad])
        two = quantile_stratify(ds.true_risk, 2)
        assert res.group_cindex.point > concordance_index(two.astype(float), out)


class TestTnm:
    def test_six_codes(self):
        assert tnm_stratify([0, 1, 2, 3, 4, 5, 5]).max() == 6

    def test_single(self):
        assert set(tnm_stratify([3, 3, 3]).tolist()) == {1}

    def test_unseen(self):
        with pytest.raises(SurvfixError, match="unseen stage code 7"):
            tnm_stratify([1, 7])

    def test_summary_attaches_pairwise(self):
        rng = np.random.default_rng(2)
        stage = rng.integers(0, 3, 90)
        out = Outcomes(rng.exponential(1, 90), np.ones(90, bool))
        res = summarize_groups(tnm_stratify(stage), out)
        assert res.n_groups == 3 and res.pairwise.n_tests == 3


class TestSurvivalTree:
    def test_noise_gives_single_leaf(self):
        rng = np.random.default_rng(3)
        x = pd.DataFrame({"a": rng.normal(size=100), "b": rng.normal(size=100)})
        out = Outcomes(rng.exponential(1, 100), rng.random(100) < 0.8)
        tree = fit_survival_tree(x, out)
        assert tree.n_leaves == 1

    def test_two_strata_root_split(self):
        rng = np.random.default_rng(4)
        g = rng.integers(0, 2, 300)
        x = pd.DataFrame({"noise": rng.normal(size=300), "sep": g + rng.uniform(-0.3, 0.3, 300)})
        t = rng.exponential(1.0, 300) / np.where(g == 1, 8.0, 1.0)
        tree = fit_survival_tree(x, Outcomes(t, np.ones(300, bool)), max_leaves=2)
        assert tree.root.feature == "sep"
        assert np.mean((x.sep > tree.root.threshold) == (g == 1)) > 0.95
        assert tree.n_leaves == 2
        # the high-hazard side is the higher risk group
        assert tree.labels[g == 1].mean() > tree.labels[g == 0].mean()
        np.testing.assert_array_equal(tree.predict(x), tree.labels)

    def test_max_leaves(self):
        rng = np.random.default_rng(5)
        x = pd.DataFrame({"z": rng.uniform(0, 10, 1200)})
        t = rng.exponential(1.0, 1200) / np.exp(0.5 * np.floor(x.z.to_numpy()))
        tree = fit_survival_tree(x, Outcomes(t, np.ones(1200, bool)), max_leaves=6)
        assert 2 <= tree.n_leaves <= 6
        assert min(len(leaf.indices) for leaf in tree.leaves) >= 30

    def test_permutation_invariance(self):
        rng = np.random.default_rng(6)
        x = pd.DataFrame({"a": rng.integers(0, 5, 200).astype(float), "b": rng.normal(size=200)})
        t = rng.exponential(1.0, 200) / np.exp(0.6 * x.a.to_numpy())
        out = Outcomes(t, rng.random(200) < 0.8)
        perm = rng.permutation(200)
        a = fit_survival_tree(x, out)
        b = fit_survival_tree(x.iloc[perm].reset_index(drop=True), out[perm])
        np.testing.assert_array_equal(a.labels[perm], b.labels)

    def test_too_few(self):
        with pytest.raises(SurvfixError):
            fit_survival_tree(pd.DataFrame({"a": np.arange(10.0)}), Outcomes(np.arange(1.0, 11), np.ones(10, bool)))


class TestBoundaries:
    def test_separable(self):
        x = pd.DataFrame({"r": np.linspace(0, 1, 200)})
        labels = np.where(x.r > 0.5, 2, 1)
        b = fit_boundary_svm(x, labels, 1)
        assert b.test_auroc == 1.0
        assert np.all(np.isfinite(b.weights)) and np.any(b.weights != 0)
        assert b.weights[0] > 0  # high side is the high-risk side

    def test_shuffled_labels(self):
        rng = np.random.default_rng(7)
        x = pd.DataFrame({"a": rng.normal(size=500), "b": rng.normal(size=500)})
        b = fit_boundary_svm(x, rng.integers(1, 3, 500), 1)
        assert 0.4 <= b.test_auroc <= 0.6

    def test_label_swap_flips_sides(self):
        rng = np.random.default_rng(8)
        x = pd.DataFrame({"a": rng.normal(size=300), "b": rng.normal(size=300)})
        labels = np.where(x.a + 0.5 * x.b + rng.normal(0, 0.5, 300) > 0, 2, 1)
        # explicit held-out rows so both fits see the same training rows
        fwd = fit_boundary_svm(x[:200], labels[:200], 1, x[200:], labels[200:])
        rev = fit_boundary_svm(x[:200], 3 - labels[:200], 1, x[200:], 3 - labels[200:])
        assert fwd.test_auroc == pytest.approx(rev.test_auroc)
        d_f, d_r = fwd.decision(x.to_numpy()), rev.decision(x.to_numpy())
        assert np.all((d_f > 0) != (d_r > 0))

    def test_explicit_test_rows(self):
        x = pd.DataFrame({"r": np.arange(100.0)})
        labels = np.where(x.r >= 50, 2, 1)
        b = fit_boundary_svm(x.iloc[::2], labels[::2], 1, x.iloc[1::2], labels[1::2])
        assert b.test_auroc == 1.0

    def test_one_sided(self):
        with pytest.raises(SurvfixError, match="one-sided"):
            fit_boundary_svm(pd.DataFrame({"a": [1.0, 2.0]}), [1, 1], 1)


class TestDecisionList:
    @pytest.fixture
    def dlist(self):
        names = ["r"]
        return assemble_decision_list(
            [BoundaryHyperplane(k, np.array([1.0]), -float(k), 1.0, names) for k in (2, 1, 3)]
        )

    def test_extremes(self, dlist):
        assert assign_group(dlist, {"r": -100.0}) == 1
        assert assign_group(dlist, {"r": 100.0}) == 4
        assert assign_group(dlist, [2.5]) == 3

    def test_assign_vectorized(self, dlist):
        r = np.linspace(-1, 5, 40)
        frame = pd.DataFrame({"r": r})
        assert dlist.assign(frame).tolist() == [assign_group(dlist, [v]) for v in r]
        assert set(dlist.assign(frame)) <= {1, 2, 3, 4}

    def test_missing_boundary(self):
        with pytest.raises(SurvfixError, match="boundaries"):
            DecisionList([BoundaryHyperplane(k, np.array([1.0]), 0.0, 1.0, ["r"]) for k in (1, 3)])

    def test_render(self, dlist):
        text = dlist.render()
        assert text.splitlines()[0].startswith("if ") and text.endswith("else: group 4")

    def test_reproduces_quantile_labels(self, six_strata):
        ds, out = six_strata
        feats = ds.frame[["severity"]]
        labels = quantile_stratify(ds.frame.severity.to_numpy(), 6)
        dl = assemble_decision_list([fit_boundary_svm(feats, labels, k) for k in range(1, 6)])
        assert np.mean(dl.assign(feats) == labels) >= 0.9
