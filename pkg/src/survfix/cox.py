"""Cox proportional-hazards regression with Efron tie handling.

Features are pandas DataFrames whose columns are the named covariates and
whose rows align with an :class:`~survfix.outcomes.Outcomes` instance.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import pandas as pd
from scipy import stats

from survfix.errors import (
    CollinearFeaturesError,
    NoSignificantFeaturesError,
    SurvfixError,
    ZeroVarianceError,
)
from survfix.outcomes import Outcomes

log = logging.getLogger(__name__)

Normalization = Literal["zscore", "minmax", "none"]
Z_95 = 1.96


def standardize(
    features: pd.DataFrame, mode: Normalization = "zscore"
) -> tuple[pd.DataFrame, dict[str, tuple[float, float]]]:
    """Center and scale every column; return the table and ``{name: (center, scale)}``.

    ``zscore`` uses the mean and the sample standard deviation (ddof=1);
    ``minmax`` maps the observed range onto [0, 1]; ``none`` is the identity.
    """
    params: dict[str, tuple[float, float]] = {}
    out = {}
    for name in features.columns:
        col = np.asarray(features[name], dtype=float)
        if not np.all(np.isfinite(col)):
            raise SurvfixError(f"column {name!r} has non-finite values")
        if mode == "none":
            center, scale = 0.0, 1.0
        elif mode == "zscore":
            center = float(col.mean())
            scale = float(col.std(ddof=1)) if col.size > 1 else 0.0
        elif mode == "minmax":
            center = float(col.min())
            scale = float(col.max() - col.min())
        else:
            raise ValueError(f"unknown normalization {mode!r}")
        if scale == 0.0 or not np.isfinite(scale):
            raise ZeroVarianceError(f"zero variance in column {name!r}")
        params[name] = (center, scale)
        out[name] = (col - center) / scale
    return pd.DataFrame(out, index=features.index), params


def apply_normalization(features: pd.DataFrame, params: dict[str, tuple[float, float]]) -> pd.DataFrame:
    missing = [name for name in params if name not in features.columns]
    if missing:
        raise KeyError(f"missing feature column {missing[0]!r}")
    return pd.DataFrame(
        {name: (np.asarray(features[name], dtype=float) - c) / s for name, (c, s) in params.items()},
        index=features.index,
    )


def _as_matrix(features) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


class _RiskSets:
    """Per-event-time sums needed by the Efron partial likelihood.

    Each event contributes one row; tied events at a time share the risk-set
    sums and get Efron fractions 0, 1/d, ..., (d-1)/d.
    """

    def __init__(self, x: np.ndarray, outcomes: Outcomes):
        time, event = outcomes.time, outcomes.event
        if not event.any():
            raise SurvfixError("partial likelihood needs at least one event")
        self.x = x
        self.order = np.argsort(time, kind="stable")
        self.sorted_time = time[self.order]
        self.event = event
        ev_times = time[event]
        self.uniq, inverse, counts = np.unique(ev_times, return_inverse=True, return_counts=True)
        self.ev_group = inverse  # group index per event, aligned with x[event]
        self.counts = counts
        self.first = np.searchsorted(self.sorted_time, self.uniq, side="left")
        self.row_group = np.repeat(np.arange(self.uniq.size), counts)
        self.row_frac = np.concatenate([np.arange(d) / d for d in counts])

    def terms(self, beta: np.ndarray, efron: bool = True, order: int = 2):
        x = self.x
        eta = x @ beta
        shift = eta.max() if eta.size else 0.0
        w = np.exp(eta - shift)
        n_groups = self.uniq.size
        ws = w[self.order]
        suffix_w = np.cumsum(ws[::-1])[::-1]
        s_r = suffix_w[self.first]
        w_ev = w[self.event]
        s_d = np.bincount(self.ev_group, weights=w_ev, minlength=n_groups)
        frac = self.row_frac if efron else np.zeros_like(self.row_frac)
        g = self.row_group
        phi = s_r[g] - frac * s_d[g]
        loglik = float(np.sum(eta[self.event] - shift) - np.sum(np.log(phi)))
        if order == 0:
            return loglik, None, None

        xs = x[self.order]
        wx = ws[:, None] * xs
        z_r = np.cumsum(wx[::-1], axis=0)[::-1][self.first]
        x_ev = x[self.event]
        z_d = np.zeros((n_groups, x.shape[1]))
        np.add.at(z_d, self.ev_group, w_ev[:, None] * x_ev)
        z = z_r[g] - frac[:, None] * z_d[g]
        grad = x_ev.sum(axis=0) - np.sum(z / phi[:, None], axis=0)
        if order == 1:
            return loglik, grad, None

        wxx = wx[:, :, None] * xs[:, None, :]
        w_r = np.cumsum(wxx[::-1], axis=0)[::-1][self.first]
        w_d = np.zeros((n_groups, x.shape[1], x.shape[1]))
        np.add.at(w_d, self.ev_group, (w_ev[:, None] * x_ev)[:, :, None] * x_ev[:, None, :])
        wl = w_r[g] - frac[:, None, None] * w_d[g]
        info = np.sum(wl / phi[:, None, None], axis=0) - np.einsum("ri,rj->ij", z / phi[:, None], z / phi[:, None])
        return loglik, grad, info


def neg_log_partial_likelihood(beta, features, outcomes: Outcomes, ties: str = "efron") -> float:
    """Negative log partial likelihood; ``ties`` is ``"efron"`` or ``"breslow"``."""
    x = _as_matrix(features)
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if beta.size != x.shape[1]:
        raise SurvfixError(f"beta has {beta.size} entries for {x.shape[1]} features")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(beta))):
        raise SurvfixError("non-finite input to partial likelihood")
    rs = _RiskSets(x, outcomes)
    loglik, _, _ = rs.terms(beta, efron=(ties == "efron"), order=0)
    return -loglik


def cox_score(beta, features, outcomes: Outcomes) -> np.ndarray:
    """Gradient of :func:`neg_log_partial_likelihood` (Efron) with respect to beta."""
    x = _as_matrix(features)
    rs = _RiskSets(x, outcomes)
    _, grad, _ = rs.terms(np.atleast_1d(np.asarray(beta, dtype=float)), order=1)
    return -grad


def cox_information(beta, features, outcomes: Outcomes) -> np.ndarray:
    """Observed information (Hessian of the negative log partial likelihood)."""
    x = _as_matrix(features)
    rs = _RiskSets(x, outcomes)
    _, _, info = rs.terms(np.atleast_1d(np.asarray(beta, dtype=float)), order=2)
    return info


def orthogonality_penalty(features) -> float:
    """Mean squared off-diagonal Pearson correlation between feature columns."""
    x = _as_matrix(features)
    if x.shape[0] < 2:
        raise SurvfixError("orthogonality penalty needs at least 2 rows")
    p = x.shape[1]
    sd = x.std(axis=0)
    if np.any(sd == 0):
        bad = int(np.nonzero(sd == 0)[0][0])
        name = features.columns[bad] if isinstance(features, pd.DataFrame) else bad
        raise ZeroVarianceError(f"zero variance in column {name!r}")
    if p == 1:
        return 0.0
    corr = np.corrcoef(x, rowvar=False)
    off = corr[~np.eye(p, dtype=bool)]
    return float(np.mean(off**2))


@dataclass(frozen=True)
class CoxLossConfig:
    lam: float = 0.001

    def __post_init__(self):
        if not (self.lam >= 0 and np.isfinite(self.lam)):
            raise ValueError(f"orthogonality weight must be >= 0, got {self.lam}")


def composite_loss(beta, features, outcomes: Outcomes, config: CoxLossConfig = CoxLossConfig()) -> float:
    """CoxPH loss plus ``config.lam`` times the orthogonality penalty of the features."""
    loss = neg_log_partial_likelihood(beta, features, outcomes)
    if config.lam == 0:
        return loss
    return loss + config.lam * orthogonality_penalty(features)


@dataclass
class CoxFit:
    feature_names: list[str]
    beta: np.ndarray
    std_err: np.ndarray
    p_value: np.ndarray
    log_likelihood: float  # negative log partial likelihood at the optimum
    norm_params: dict[str, tuple[float, float]]
    normalization: str = "zscore"
    converged: bool = True
    iterations: int = 0
    hazard_ratio: np.ndarray = field(init=False)
    hr_ci_lower: np.ndarray = field(init=False)
    hr_ci_upper: np.ndarray = field(init=False)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.std_err = np.asarray(self.std_err, dtype=float)
        self.p_value = np.asarray(self.p_value, dtype=float)
        self.hazard_ratio = np.exp(self.beta)
        self.hr_ci_lower = np.exp(self.beta - Z_95 * self.std_err)
        self.hr_ci_upper = np.exp(self.beta + Z_95 * self.std_err)

    @property
    def effects(self) -> list[str]:
        return [effect_label(hr) for hr in self.hazard_ratio]

    def to_frame(self) -> pd.DataFrame:
        """Hazard table: name, HR, CI, p-value, protective/harmful tag."""
        return pd.DataFrame(
            {
                "name": self.feature_names,
                "hr": self.hazard_ratio,
                "ci_lo": self.hr_ci_lower,
                "ci_hi": self.hr_ci_upper,
                "p": self.p_value,
                "effect": self.effects,
                "beta": self.beta,
                "se": self.std_err,
            }
        )


def effect_label(hazard_ratio: float) -> str:
    if hazard_ratio < 1.0:
        return "protective"
    if hazard_ratio > 1.0:
        return "harmful"
    return "neutral"


def wald_p_values(beta: np.ndarray, std_err: np.ndarray) -> np.ndarray:
    z = np.asarray(beta) / np.asarray(std_err)
    return np.clip(2.0 * stats.norm.sf(np.abs(z)), 0.0, 1.0)


def _solve_info(info: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(info)) or np.linalg.cond(info) > 1e12:
        raise CollinearFeaturesError("collinear features: information matrix is singular")
    try:
        return np.linalg.solve(info, rhs)
    except np.linalg.LinAlgError as exc:
        raise CollinearFeaturesError("collinear features: information matrix is singular") from exc


def fit_cox(
    features: pd.DataFrame,
    outcomes: Outcomes,
    normalization: Normalization = "zscore",
    max_iter: int = 100,
    tol: float = 1e-7,
    max_halvings: int = 10,
) -> CoxFit:
    """Maximize the Efron partial likelihood by Newton-Raphson with step-halving.

    Converges when the relative change of the log partial likelihood drops
    below ``tol`` and the Newton step is below 1e-6 in every coordinate.
    Standard errors come from the inverse observed information at the optimum.
    """
    if len(features) != len(outcomes):
        raise SurvfixError(f"{len(features)} feature rows for {len(outcomes)} outcomes")
    if outcomes.n_events == 0:
        raise SurvfixError("cannot fit a Cox model without events")
    names = [str(c) for c in features.columns]
    z, params = standardize(features, normalization)
    x = z.to_numpy(dtype=float)
    rs = _RiskSets(x, outcomes)

    beta = np.zeros(x.shape[1])
    loglik, grad, info = rs.terms(beta)
    _solve_info(info, grad)  # singular at the start: collinear columns
    converged = False
    diverged = False
    it = 0
    for it in range(1, max_iter + 1):
        try:
            step = _solve_info(info, grad)
        except CollinearFeaturesError:
            # information vanished along the path: the likelihood is monotone
            # and some coefficient is running off to infinity
            diverged = True
            break
        new_beta = beta + step
        new_ll, new_grad, new_info = rs.terms(new_beta)
        halvings = 0
        while (not np.isfinite(new_ll) or new_ll < loglik) and halvings < max_halvings:
            step = step / 2
            new_beta = beta + step
            new_ll, new_grad, new_info = rs.terms(new_beta)
            halvings += 1
        rel = abs(new_ll - loglik) / max(abs(loglik), 1e-300)
        beta, loglik, grad, info = new_beta, new_ll, new_grad, new_info
        if rel < tol and np.max(np.abs(step)) < 1e-6:
            converged = True
            break
    if not converged:
        why = "information became singular (monotone likelihood)" if diverged else f"{max_iter} iterations"
        warnings.warn(f"Cox fit did not converge: {why}", RuntimeWarning, stacklevel=2)

    try:
        cov = _solve_info(info, np.eye(x.shape[1]))
        std_err = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except CollinearFeaturesError:
        if converged:
            raise
        std_err = np.full(x.shape[1], np.inf)
    log.debug("cox fit: %d iterations, -loglik %.6f", it, -loglik)
    return CoxFit(
        feature_names=names,
        beta=beta,
        std_err=std_err,
        p_value=wald_p_values(beta, std_err),
        log_likelihood=-loglik,
        norm_params=params,
        normalization=normalization,
        converged=converged,
        iterations=it,
    )


def prune_refit(fit: CoxFit, features: pd.DataFrame, outcomes: Outcomes, alpha: float = 0.05) -> CoxFit:
    """Drop features with Wald p > alpha and refit once on the rest."""
    keep = [n for n, p in zip(fit.feature_names, fit.p_value) if p <= alpha]
    if not keep:
        raise NoSignificantFeaturesError(f"no significant features at alpha={alpha}")
    if len(keep) == len(fit.feature_names):
        return fit
    dropped = [n for n in fit.feature_names if n not in keep]
    log.info("pruning non-significant features: %s", ", ".join(dropped))
    return fit_cox(features[keep], outcomes, normalization=fit.normalization)


def predict_risk(fit: CoxFit, features: pd.DataFrame, standardized: bool = False) -> np.ndarray:
    """Linear predictor beta . x on the log relative-hazard scale.

    Raw features are normalized with the fit's stored parameters unless
    ``standardized`` says they already are.
    """
    missing = [n for n in fit.feature_names if n not in features.columns]
    if missing:
        raise KeyError(f"missing feature column {missing[0]!r}")
    if standardized:
        x = features[fit.feature_names].to_numpy(dtype=float)
    else:
        x = apply_normalization(features, {n: fit.norm_params[n] for n in fit.feature_names}).to_numpy()
    return x @ fit.beta
