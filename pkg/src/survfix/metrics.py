"""Ranking metrics under censoring and percentile bootstrap intervals."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import rankdata

from survfix.errors import NoComparablePairsError, SurvfixError, UnstableBootstrapError
from survfix.outcomes import Outcomes

TWO_YEARS = 730.0


@dataclass(frozen=True)
class MetricResult:
    point: float
    ci_lower: float
    ci_upper: float
    n_bootstrap: int = 0
    seed: int | None = None
    n_degenerate: int = 0

    def __str__(self) -> str:
        return f"{self.point:.3f} ({self.ci_lower:.3f}, {self.ci_upper:.3f})"


def concordance_index(risks, outcomes: Outcomes, chunk: int = 2048) -> float:
    """Harrell's C: the fraction of comparable pairs whose risk ordering is right.

    A pair (i, j) is comparable when subject i had an event strictly before
    j's time, or both share a time and only i had an event. Higher risk is
    expected for i; tied risks earn half credit.
    """
    risks = np.asarray(risks, dtype=float).reshape(-1)
    if risks.size != len(outcomes):
        raise SurvfixError(f"{risks.size} risks for {len(outcomes)} outcomes")
    time, event = outcomes.time, outcomes.event
    idx = np.nonzero(event)[0]
    concordant = 0.0
    comparable = 0
    for start in range(0, idx.size, chunk):
        i = idx[start : start + chunk]
        ti, ri = time[i][:, None], risks[i][:, None]
        comp = (ti < time[None, :]) | ((ti == time[None, :]) & ~event[None, :])
        comparable += int(comp.sum())
        concordant += float(np.sum(comp & (ri > risks[None, :])))
        concordant += 0.5 * float(np.sum(comp & (ri == risks[None, :])))
    if comparable == 0:
        raise NoComparablePairsError("no comparable pairs")
    return concordant / comparable


def binary_auroc(scores, labels) -> float:
    """Mann-Whitney AUROC; tied scores between classes count one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SurvfixError("AUROC needs at least one positive and one negative")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_at_horizon(risks, outcomes: Outcomes, horizon: float = TWO_YEARS) -> float:
    """AUROC for death by ``horizon``; subjects censored before it are dropped."""
    if not horizon > 0:
        raise SurvfixError("horizon must be positive")
    risks = np.asarray(risks, dtype=float).reshape(-1)
    if risks.size != len(outcomes):
        raise SurvfixError(f"{risks.size} risks for {len(outcomes)} outcomes")
    time, event = outcomes.time, outcomes.event
    positive = event & (time <= horizon)
    negative = time > horizon
    keep = positive | negative
    if not positive.any() or not negative.any():
        raise SurvfixError(f"no positives or no negatives at horizon {horizon}")
    return binary_auroc(risks[keep], positive[keep])


def bootstrap_ci(
    metric: Callable[[np.ndarray, Outcomes], float],
    risks,
    outcomes: Outcomes,
    n: int = 1000,
    level: float = 0.95,
    seed: int = 0,
    threads: int = 1,
) -> MetricResult:
    """Percentile bootstrap over subjects.

    Resample ``b`` draws its indices from ``default_rng([seed, b])``, so the
    interval does not depend on how resamples are spread over threads.
    Resamples on which ``metric`` raises are discarded and counted.
    """
    risks = np.asarray(risks, dtype=float)
    point = float(metric(risks, outcomes))
    size = len(outcomes)

    def one(b: int) -> float:
        rng = np.random.default_rng([seed, b])
        idx = rng.integers(0, size, size)
        try:
            return float(metric(risks[idx], outcomes[idx]))
        except SurvfixError:
            return np.nan

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            values = np.array(list(pool.map(one, range(n))))
    else:
        values = np.array([one(b) for b in range(n)])
    bad = int(np.isnan(values).sum())
    if bad > n / 2:
        raise UnstableBootstrapError(f"unstable bootstrap: {bad} of {n} resamples degenerate")
    good = values[~np.isnan(values)]
    tail = (1.0 - level) / 2.0
    # inverse of the linearly interpolated empirical CDF: at n = 1000 and
    # level 0.95 the endpoints are exactly the 25th and 975th order statistics
    lo, hi = np.quantile(good, [tail, 1.0 - tail], method="interpolated_inverted_cdf")
    return MetricResult(point, float(lo), float(hi), n, seed, bad)
