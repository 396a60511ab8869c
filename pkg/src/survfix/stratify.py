"""Risk stratification: quantile groups, TNM and survival-tree baselines, SVM boundaries."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from survfix.errors import DegenerateTestError, EmptyCohortError, SurvfixError
from survfix.metrics import (
    TWO_YEARS,
    MetricResult,
    auc_at_horizon,
    binary_auroc,
    bootstrap_ci,
    concordance_index,
)
from survfix.outcomes import Outcomes
from survfix.survival_stats import KmCurve, PairwiseReport, chi2_sf, kaplan_meier, pairwise_logrank

log = logging.getLogger(__name__)

TNM_CODES = {"0": 0, "I": 1, "II": 2, "III": 3, "IVA": 4, "IVB": 5}


def quantile_stratify(risks, n: int) -> np.ndarray:
    """Equal-size groups by sorted risk; labels 1..n with 1 the lowest risks.

    Ties keep the original subject order, and earlier groups take the extra
    subjects when the cohort does not divide evenly.
    """
    risks = np.asarray(risks, dtype=float)
    if n < 2:
        raise SurvfixError("need at least 2 groups")
    if n > risks.size:
        raise SurvfixError(f"cannot split {risks.size} subjects into {n} groups")
    order = np.argsort(risks, kind="stable")
    labels = np.empty(risks.size, dtype=int)
    for g, chunk in enumerate(np.array_split(order, n), start=1):
        labels[chunk] = g
    return labels


def cut_points(risks, labels) -> np.ndarray:
    """Risk thresholds between consecutive groups (midpoint of the gap)."""
    risks = np.asarray(risks, dtype=float)
    labels = np.asarray(labels)
    k = int(labels.max())
    return np.array(
        [(risks[labels == g].max() + risks[labels == g + 1].min()) / 2.0 for g in range(1, k)]
    )


def apply_cut_points(risks, cuts) -> np.ndarray:
    risks = np.asarray(risks, dtype=float)
    return 1 + np.sum(risks[:, None] > np.asarray(cuts)[None, :], axis=1).astype(int)


@dataclass
class StratificationResult:
    n_groups: int
    labels: np.ndarray
    km_per_group: list[KmCurve]
    pairwise: PairwiseReport | None
    corrected_alpha: float
    all_distinct: bool
    group_cindex: MetricResult | None = None
    group_auc: MetricResult | None = None
    cut_points: np.ndarray = field(default_factory=lambda: np.empty(0))
    candidates: dict[int, dict] = field(default_factory=dict)
    significant: bool = True

    @property
    def pairwise_p(self) -> np.ndarray:
        if self.pairwise is None:
            return np.full((self.n_groups, self.n_groups), np.nan)
        return self.pairwise.p_values

    def km_frame(self) -> pd.DataFrame:
        rows = []
        for g, km in enumerate(self.km_per_group, start=1):
            rows.append(pd.DataFrame({"group": g, "time": 0.0, "survival": 1.0, "ci_lo": 1.0, "ci_hi": 1.0}, index=[0]))
            rows.append(
                pd.DataFrame(
                    {"group": g, "time": km.times, "survival": km.survival, "ci_lo": km.ci_lower, "ci_hi": km.ci_upper}
                )
            )
        return pd.concat(rows, ignore_index=True)


def _group_metric(metric, labels, outcomes, n_bootstrap, seed, **kw) -> MetricResult | None:
    fn = (lambda r, o: metric(r, o, **kw)) if kw else metric
    try:
        if n_bootstrap:
            return bootstrap_ci(fn, labels.astype(float), outcomes, n=n_bootstrap, seed=seed)
        point = fn(labels.astype(float), outcomes)
        return MetricResult(point, point, point)
    except SurvfixError:
        return None


def summarize_groups(
    labels,
    outcomes: Outcomes,
    alpha: float = 0.05,
    consecutive: bool = False,
    horizon: float = TWO_YEARS,
    n_bootstrap: int = 0,
    seed: int = 0,
) -> StratificationResult:
    """KM curves, pairwise log-rank p-values and group-index metrics for a grouping."""
    labels = np.asarray(labels, dtype=int)
    k = int(labels.max())
    groups = [outcomes[labels == g] for g in range(1, k + 1)]
    kms = [kaplan_meier(g) for g in groups]
    pairwise = None
    corrected = alpha
    distinct = False
    if k >= 2:
        try:
            pairwise = pairwise_logrank(groups, alpha, consecutive=consecutive)
            corrected, distinct = pairwise.corrected_alpha, pairwise.all_distinct
        except (DegenerateTestError, EmptyCohortError) as exc:
            log.info("grouping with %d groups is untestable: %s", k, exc)
    return StratificationResult(
        n_groups=k,
        labels=labels,
        km_per_group=kms,
        pairwise=pairwise,
        corrected_alpha=corrected,
        all_distinct=distinct,
        group_cindex=_group_metric(concordance_index, labels, outcomes, n_bootstrap, seed),
        group_auc=_group_metric(auc_at_horizon, labels, outcomes, n_bootstrap, seed, horizon=horizon),
    )


def select_group_count(
    risks,
    outcomes: Outcomes,
    alpha: float = 0.05,
    n_max: int = 6,
    consecutive: bool = False,
    horizon: float = TWO_YEARS,
    n_bootstrap: int = 0,
    seed: int = 0,
) -> StratificationResult:
    """Largest quantile group count (2..n_max) whose groups are all pairwise distinct.

    Returns a single group flagged ``significant=False`` when no count qualifies.
    """
    risks = np.asarray(risks, dtype=float)
    if outcomes.n_events == 0:
        raise DegenerateTestError("degenerate outcomes: no events")
    if risks.size != len(outcomes):
        raise SurvfixError(f"{risks.size} risks for {len(outcomes)} outcomes")
    candidates = {}
    chosen = None
    for n in range(2, min(n_max, risks.size) + 1):
        labels = quantile_stratify(risks, n)
        groups = [outcomes[labels == g] for g in range(1, n + 1)]
        try:
            report = pairwise_logrank(groups, alpha, consecutive=consecutive)
            distinct, max_p = report.all_distinct, float(np.nanmax(report.p_values))
        except DegenerateTestError:
            distinct, max_p = False, 1.0
        candidates[n] = {"all_distinct": distinct, "max_p": max_p, "corrected_alpha": alpha / (n - 1 if consecutive else n * (n - 1) // 2)}
        if distinct:
            chosen = (n, labels)
    if chosen is None:
        labels = np.ones(risks.size, dtype=int)
        result = summarize_groups(labels, outcomes, alpha, consecutive, horizon, 0, seed)
        result.significant = False
        result.candidates = candidates
        return result
    n, labels = chosen
    result = summarize_groups(labels, outcomes, alpha, consecutive, horizon, n_bootstrap, seed)
    result.cut_points = cut_points(risks, labels)
    result.candidates = candidates
    return result


def tnm_stratify(stage, codes: Sequence[int] = (0, 1, 2, 3, 4, 5)) -> np.ndarray:
    """One group per stage code present, ordered by code (labels 1..k)."""
    stage = np.asarray(stage)
    allowed = set(codes)
    unseen = sorted({s for s in stage.tolist() if s not in allowed}, key=str)
    if unseen:
        raise SurvfixError(f"unseen stage code {unseen[0]!r}")
    present = sorted(set(stage.tolist()))
    index = {code: i + 1 for i, code in enumerate(present)}
    return np.array([index[s] for s in stage.tolist()], dtype=int)


# --------------------------------------------------------------------------- survival tree


@dataclass(eq=False)
class TreeNode:
    indices: np.ndarray
    feature: str | None = None
    threshold: float = np.nan
    statistic: float = np.nan
    p_value: float = np.nan
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    group: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.left is None


def _best_split(x: np.ndarray, outcomes: Outcomes, idx: np.ndarray, min_leaf: int):
    """Largest log-rank statistic over all features and midpoint thresholds.

    Returns ``(statistic, feature_index, threshold)`` or None. Ties go to the
    lowest feature index, then the lowest threshold.
    """
    n = idx.size
    if n < 2 * min_leaf:
        return None
    time = outcomes.time[idx]
    event = outcomes.event[idx]
    if not event.any():
        return None
    t_u = np.unique(time[event])
    at_risk = time[:, None] >= t_u[None, :]
    dies = event[:, None] & (time[:, None] == t_u[None, :])
    n_j = at_risk.sum(axis=0).astype(float)
    d_j = dies.sum(axis=0).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        var_factor = np.where(n_j > 1, d_j * (n_j - d_j) / (n_j - 1), 0.0)

    best = None
    for f in range(x.shape[1]):
        xf = x[idx, f]
        order = np.argsort(xf, kind="stable")
        xs = xf[order]
        ends = np.nonzero(xs[:-1] < xs[1:])[0]  # last position of each value but the largest
        left_sizes = ends + 1
        ok = (left_sizes >= min_leaf) & (n - left_sizes >= min_leaf)
        ends = ends[ok]
        if ends.size == 0:
            continue
        n_l = np.cumsum(at_risk[order], axis=0)[ends].astype(float)
        d_l = np.cumsum(dies[order], axis=0)[ends].astype(float)
        frac = n_l / n_j
        o_minus_e = np.sum(d_l - d_j * frac, axis=1)
        v = np.sum(var_factor * frac * (1 - frac), axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            stat = np.where(v > 0, o_minus_e**2 / v, 0.0)
        j = int(np.argmax(stat))
        if best is None or stat[j] > best[0]:
            best = (float(stat[j]), f, float((xs[ends[j]] + xs[ends[j] + 1]) / 2.0))
    return best


@dataclass
class SurvivalTree:
    root: TreeNode
    feature_names: list[str]
    leaves: list[TreeNode]
    labels: np.ndarray

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    def predict(self, features: pd.DataFrame) -> np.ndarray:
        x = features[self.feature_names].to_numpy(dtype=float)
        out = np.empty(x.shape[0], dtype=int)
        for i, row in enumerate(x):
            node = self.root
            while not node.is_leaf:
                f = self.feature_names.index(node.feature)
                node = node.left if row[f] <= node.threshold else node.right
            out[i] = node.group
        return out


def fit_survival_tree(
    features: pd.DataFrame,
    outcomes: Outcomes,
    min_leaf: int = 30,
    max_leaves: int = 6,
    split_alpha: float = 0.05,
) -> SurvivalTree:
    """Greedy best-first log-rank splitting.

    The admissible split (unadjusted p <= ``split_alpha``) with the largest
    statistic among all current leaves is applied until ``max_leaves`` is
    reached. Leaves become risk groups 1..k, group 1 having the best KM
    survival (median survival descending, never-reached medians first).
    """
    if len(features) < 2 * min_leaf:
        raise SurvfixError(f"need at least {2 * min_leaf} subjects for a survival tree")
    names = [str(c) for c in features.columns]
    x = features.to_numpy(dtype=float)
    root = TreeNode(np.arange(len(features)))
    leaves = [root]
    pending = {id(root): _best_split(x, outcomes, root.indices, min_leaf)}
    while len(leaves) < max_leaves:
        scored = [
            (pending[id(leaf)][0], -i, leaf)
            for i, leaf in enumerate(leaves)
            if pending[id(leaf)] is not None and chi2_sf(pending[id(leaf)][0], 1) <= split_alpha
        ]
        if not scored:
            break
        stat, _, leaf = max(scored, key=lambda s: (s[0], s[1]))
        _, f, thr = pending[id(leaf)]
        mask = x[leaf.indices, f] <= thr
        leaf.feature, leaf.threshold, leaf.statistic = names[f], thr, stat
        leaf.p_value = chi2_sf(stat, 1)
        leaf.left = TreeNode(leaf.indices[mask])
        leaf.right = TreeNode(leaf.indices[~mask])
        pos = leaves.index(leaf)
        leaves[pos : pos + 1] = [leaf.left, leaf.right]
        for child in (leaf.left, leaf.right):
            pending[id(child)] = _best_split(x, outcomes, child.indices, min_leaf)

    def risk_key(i_leaf):
        i, leaf = i_leaf
        sub = outcomes[leaf.indices]
        median = kaplan_meier(sub).median
        median = np.inf if np.isnan(median) else median
        return (-median, sub.n_events / len(sub), i)

    labels = np.empty(len(features), dtype=int)
    for g, (_, leaf) in enumerate(sorted(enumerate(leaves), key=risk_key), start=1):
        leaf.group = g
        labels[leaf.indices] = g
    return SurvivalTree(root, names, leaves, labels)


# --------------------------------------------------------------------------- SVM boundaries


@dataclass
class BoundaryHyperplane:
    """``weights . x + intercept > 0`` puts a subject above boundary ``k``."""

    boundary_index: int
    weights: np.ndarray
    intercept: float
    test_auroc: float
    feature_names: list[str] = field(default_factory=list)

    def decision(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x @ self.weights + self.intercept

    def equation(self, precision: int = 3) -> str:
        terms = [f"{w:+.{precision}g}*{n}" for w, n in zip(self.weights, self.feature_names)]
        return " ".join(terms + [f"{self.intercept:+.{precision}g}"]).lstrip("+")


def linear_svm(x: np.ndarray, y: np.ndarray, C: float = 1.0, max_iter: int = 100_000, seed: int = 0, tol: float = 1e-4):
    """Soft-margin linear SVM (hinge loss) by dual coordinate descent.

    The bias is learned as the weight of a constant feature. ``max_iter``
    caps the number of coordinate updates; sweeps stop early once the
    projected-gradient spread falls below ``tol``.
    """
    rng = np.random.default_rng(seed)
    n, p = x.shape
    xa = np.hstack([x, np.ones((n, 1))])
    rows = [r for r in xa]
    q = np.einsum("ij,ij->i", xa, xa)
    alpha = np.zeros(n)
    w = np.zeros(p + 1)
    updates = 0
    while updates < max_iter:
        pg_max, pg_min = -np.inf, np.inf
        for i in rng.permutation(n):
            if updates >= max_iter:
                break
            updates += 1
            g = y[i] * float(w @ rows[i]) - 1.0
            a = alpha[i]
            if a == 0.0:
                pg = min(g, 0.0)
            elif a == C:
                pg = max(g, 0.0)
            else:
                pg = g
            pg_max, pg_min = max(pg_max, pg), min(pg_min, pg)
            if pg != 0.0:
                new = min(max(a - g / q[i], 0.0), C)
                w += (new - a) * y[i] * rows[i]
                alpha[i] = new
        if pg_max - pg_min < tol:
            break
    return w[:p], float(w[p])


def fit_boundary_svm(
    features: pd.DataFrame,
    labels,
    k: int,
    test_features: pd.DataFrame | None = None,
    test_labels=None,
    C: float = 1.0,
    max_iter: int = 100_000,
    seed: int = 0,
    holdout: float = 0.3,
) -> BoundaryHyperplane:
    """Linear SVM separating groups <= k (class 0) from groups > k (class 1).

    Training features are standardized; the returned hyperplane is expressed
    on the raw feature scale. Without explicit test rows a stratified
    ``holdout`` fraction of the input is held out for the AUROC.
    """
    names = [str(c) for c in features.columns]
    x = features.to_numpy(dtype=float)
    y = np.where(np.asarray(labels) > k, 1.0, -1.0)
    if not (np.any(y > 0) and np.any(y < 0)):
        raise SurvfixError(f"boundary {k} is one-sided")
    if test_features is None:
        rng = np.random.default_rng([seed, k])
        test_mask = np.zeros(y.size, dtype=bool)
        for cls in (-1.0, 1.0):
            members = np.nonzero(y == cls)[0]
            members = members[rng.permutation(members.size)]
            test_mask[members[: int(round(holdout * members.size))]] = True
        x_test, y_test = x[test_mask], y[test_mask]
        x, y = x[~test_mask], y[~test_mask]
    else:
        x_test = test_features[names].to_numpy(dtype=float)
        y_test = np.where(np.asarray(test_labels) > k, 1.0, -1.0)
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    w_s, b_s = linear_svm((x - mu) / sd, y, C=C, max_iter=max_iter, seed=seed)
    weights = w_s / sd
    intercept = b_s - float(np.sum(w_s * mu / sd))
    auroc = np.nan
    if np.any(y_test > 0) and np.any(y_test < 0):
        auroc = binary_auroc(x_test @ weights + intercept, y_test > 0)
    return BoundaryHyperplane(k, weights, intercept, auroc, names)


@dataclass
class DecisionList:
    boundaries: list[BoundaryHyperplane]

    def __post_init__(self):
        self.boundaries = sorted(self.boundaries, key=lambda b: b.boundary_index)
        ks = [b.boundary_index for b in self.boundaries]
        if ks != list(range(1, len(ks) + 1)):
            raise SurvfixError(f"decision list needs boundaries 1..{len(ks)}, got {ks}")

    @property
    def n_groups(self) -> int:
        return len(self.boundaries) + 1

    def assign(self, features: pd.DataFrame) -> np.ndarray:
        """Group of every row: the first boundary that puts it on the low side."""
        names = self.boundaries[0].feature_names
        x = features[names].to_numpy(dtype=float)
        out = np.full(x.shape[0], self.n_groups, dtype=int)
        undecided = np.ones(x.shape[0], dtype=bool)
        for b in self.boundaries:
            low = undecided & (b.decision(x) <= 0)
            out[low] = b.boundary_index
            undecided &= ~low
        return out

    def render(self, precision: int = 3) -> str:
        lines = []
        for i, b in enumerate(self.boundaries):
            kw = "if" if i == 0 else "elif"
            lines.append(f"{kw} {b.equation(precision)} <= 0: group {b.boundary_index}")
        lines.append(f"else: group {self.n_groups}")
        return "\n".join(lines)


def assemble_decision_list(boundaries: Sequence[BoundaryHyperplane]) -> DecisionList:
    return DecisionList(list(boundaries))


def assign_group(decision_list: DecisionList, x: Mapping[str, float] | Sequence[float]) -> int:
    names = decision_list.boundaries[0].feature_names
    if isinstance(x, Mapping):
        row = np.array([float(x[n]) for n in names])
    else:
        row = np.asarray(x, dtype=float)
    for b in decision_list.boundaries:
        if float(b.decision(row)) <= 0:
            return b.boundary_index
    return decision_list.n_groups
