"""Kaplan-Meier estimation and log-rank testing."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import gammaincc

from survfix.errors import DegenerateTestError, EmptyCohortError
from survfix.outcomes import Outcomes


@dataclass
class KmCurve:
    """Product-limit survival curve, one entry per distinct event time."""

    times: np.ndarray
    survival: np.ndarray
    variance: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    n_at_risk: np.ndarray
    n_events: np.ndarray
    n_subjects: int = 0

    def survival_at(self, t) -> np.ndarray:
        """Right-continuous step function S(t); 1.0 before the first event."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        padded = np.concatenate([[1.0], self.survival])
        return padded[idx + 1]

    @property
    def median(self) -> float:
        """First time with S(t) <= 0.5, or ``nan`` when never reached."""
        below = np.nonzero(self.survival <= 0.5)[0]
        return float(self.times[below[0]]) if below.size else float("nan")


def _check_nonempty(outcomes: Outcomes) -> None:
    if len(outcomes) == 0:
        raise EmptyCohortError("empty cohort")


def kaplan_meier(outcomes: Outcomes, level: float = 0.95) -> KmCurve:
    """Kaplan-Meier estimate with Greenwood variance and log-log confidence band.

    Events at a time are counted before censorings at that same time, so a
    subject censored at ``t`` is still in the risk set for events at ``t``.
    """
    _check_nonempty(outcomes)
    time, event = outcomes.time, outcomes.event
    sorted_time = np.sort(time)
    times = np.unique(time[event])
    n = time.size
    n_at_risk = n - np.searchsorted(sorted_time, times, side="left")
    ev_sorted = np.sort(time[event])
    d = np.searchsorted(ev_sorted, times, side="right") - np.searchsorted(ev_sorted, times, side="left")

    survival = np.cumprod(1.0 - d / n_at_risk)

    with np.errstate(divide="ignore", invalid="ignore"):
        green_terms = d / (n_at_risk * (n_at_risk - d))
    green = np.cumsum(green_terms)
    exhausted = survival <= 0.0
    with np.errstate(invalid="ignore"):
        variance = np.where(exhausted, 0.0, survival**2 * green)

    z = stats.norm.ppf(0.5 + level / 2)
    lower = np.zeros_like(survival)
    upper = np.zeros_like(survival)
    ok = ~exhausted
    if np.any(ok):
        log_s = np.log(survival[ok])
        se = np.sqrt(green[ok]) / np.abs(log_s)
        lower[ok] = survival[ok] ** np.exp(z * se)
        upper[ok] = survival[ok] ** np.exp(-z * se)
    lower = np.clip(np.minimum(lower, survival), 0.0, 1.0)
    upper = np.clip(np.maximum(upper, survival), 0.0, 1.0)

    return KmCurve(
        times=times,
        survival=survival,
        variance=variance,
        ci_lower=lower,
        ci_upper=upper,
        n_at_risk=n_at_risk,
        n_events=d,
        n_subjects=n,
    )


@dataclass(frozen=True)
class LogRankResult:
    statistic: float
    p_value: float
    dof: int = 1


def chi2_sf(statistic: float, dof: int) -> float:
    """Upper-tail chi-square probability (regularized upper incomplete gamma)."""
    if statistic <= 0:
        return 1.0
    return float(gammaincc(dof / 2.0, statistic / 2.0))


def logrank_two_sample(a: Outcomes, b: Outcomes) -> LogRankResult:
    """Classic (unweighted) two-sample log-rank test."""
    if len(a) == 0 or len(b) == 0:
        raise EmptyCohortError("log-rank test needs two non-empty groups")
    time = np.concatenate([a.time, b.time])
    event = np.concatenate([a.event, b.event])
    if not event.any():
        raise DegenerateTestError("degenerate test: pooled groups have no events")

    times = np.unique(time[event])
    n = time.size - np.searchsorted(np.sort(time), times, side="left")
    n_a = len(a) - np.searchsorted(np.sort(a.time), times, side="left")
    ev = np.sort(time[event])
    d = np.searchsorted(ev, times, side="right") - np.searchsorted(ev, times, side="left")
    ev_a = np.sort(a.time[a.event])
    d_a = np.searchsorted(ev_a, times, side="right") - np.searchsorted(ev_a, times, side="left")

    frac = n_a / n
    expected = d * frac
    with np.errstate(divide="ignore", invalid="ignore"):
        var = np.where(n > 1, d * frac * (1 - frac) * (n - d) / (n - 1), 0.0)
    o_minus_e = float(np.sum(d_a - expected))
    v = float(np.sum(var))
    if v <= 0.0:
        return LogRankResult(0.0, 1.0, 1)
    statistic = o_minus_e**2 / v
    return LogRankResult(statistic, chi2_sf(statistic, 1), 1)


@dataclass
class PairwiseReport:
    """Pairwise log-rank p-values for ``k`` groups with a Bonferroni threshold."""

    p_values: np.ndarray  # k x k, symmetric, nan where untested
    statistics: np.ndarray
    pairs: list[tuple[int, int]]
    alpha: float
    corrected_alpha: float
    all_distinct: bool
    n_tests: int = field(init=False)

    def __post_init__(self):
        self.n_tests = len(self.pairs)


def pairwise_logrank(groups: list[Outcomes], alpha: float = 0.05, consecutive: bool = False) -> PairwiseReport:
    """Log-rank test for every unordered pair of groups (or only adjacent ones).

    A pair is considered distinct when its p-value is strictly below
    ``alpha / n_tests``.
    """
    k = len(groups)
    if k < 2:
        raise ValueError("pairwise testing needs at least 2 groups")
    if consecutive:
        pairs = [(i, i + 1) for i in range(k - 1)]
    else:
        pairs = list(itertools.combinations(range(k), 2))
    corrected = alpha / len(pairs)
    p = np.full((k, k), np.nan)
    s = np.full((k, k), np.nan)
    for i, j in pairs:
        try:
            res = logrank_two_sample(groups[i], groups[j])
        except (EmptyCohortError, DegenerateTestError) as exc:
            raise type(exc)(f"groups ({i}, {j}): {exc}") from exc
        p[i, j] = p[j, i] = res.p_value
        s[i, j] = s[j, i] = res.statistic
    all_distinct = all(p[i, j] < corrected for i, j in pairs)
    return PairwiseReport(p, s, pairs, alpha, corrected, all_distinct)
