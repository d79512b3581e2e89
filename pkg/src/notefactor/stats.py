"""Descriptive and inferential statistics for rating-panel analyses.

Rank correlation, bimodality, shrunk proportions, pre/post level-shift
regressions with HAC errors, two-way fixed-effects interactions, and
seeded permutation tests.  All estimators are pure functions of their
inputs; permutation replicates are deterministic per seed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sps


@dataclass(frozen=True)
class PanelCell:
    """One (unit, week) outcome with its group flags."""

    unit: str
    week: int
    outcome: float
    minority: bool
    post: bool


@dataclass(frozen=True)
class RegressionResult:
    beta: float
    se: float
    ci_low: float
    ci_high: float
    p_value: float


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation: Pearson correlation of mid-ranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be 1-d vectors of equal length")
    if len(x) < 2:
        raise ValueError("need at least two observations")
    rx = sps.rankdata(x, method="average")
    ry = sps.rankdata(y, method="average")
    if np.ptp(rx) == 0.0 or np.ptp(ry) == 0.0:
        raise ValueError("degenerate ranks")
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    return float((rx @ ry) / np.sqrt((rx @ rx) * (ry @ ry)))


def bimodality_coefficient(samples: Sequence[float], corrected: bool = False) -> float:
    """Bimodality coefficient (skewness^2 + 1) / kurtosis.

    Kurtosis is the raw fourth standardised moment (Gaussian -> 3), so a
    Gaussian sample gives ~1/3 and bimodal shapes push the value up.
    ``corrected`` applies the usual finite-sample adjustments to both
    moments before combining them.
    """
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < 4:
        raise ValueError("need at least four observations")
    centered = x - x.mean()
    m2 = float(np.mean(centered**2))
    if m2 == 0.0:
        raise ValueError("zero variance")
    g1 = float(np.mean(centered**3)) / m2**1.5
    g2 = float(np.mean(centered**4)) / m2**2
    if not corrected:
        return (g1 * g1 + 1.0) / g2
    n = len(x)
    G1 = g1 * np.sqrt(n * (n - 1.0)) / (n - 2.0)
    G2 = ((n - 1.0) / ((n - 2.0) * (n - 3.0))) * ((n + 1.0) * (g2 - 3.0) + 6.0) + 3.0
    return (G1 * G1 + 1.0) / G2


def jeffreys_proportion(k: int, n: int) -> float:
    """Jeffreys-shrunk proportion (k + 0.5) / (n + 1)."""
    if k < 0 or n < 0 or k > n:
        raise ValueError(f"require 0 <= k <= n, got k={k}, n={n}")
    return (k + 0.5) / (n + 1.0)


def _newey_west_cov(X: np.ndarray, resid: np.ndarray, w: np.ndarray, lags: int) -> np.ndarray:
    """HAC covariance of weighted OLS with Bartlett kernel at a fixed lag."""
    scores = X * (w * resid)[:, None]
    T = len(resid)
    S = scores.T @ scores
    for lag in range(1, min(lags, T - 1) + 1):
        gamma = scores[lag:].T @ scores[:-lag]
        S += (1.0 - lag / (lags + 1.0)) * (gamma + gamma.T)
    XtWX = X.T @ (X * w[:, None])
    XtWX_inv = np.linalg.inv(XtWX)
    return XtWX_inv @ S @ XtWX_inv


def weekly_gap_did(
    gaps: Sequence[float],
    post_flags: Sequence[bool],
    weights: Sequence[float] | None = None,
    hac_lags: int = 4,
    running_var: Sequence[float] | None = None,
) -> RegressionResult:
    """Level-shift regression gap_w = alpha + beta Post_w (+ local-linear terms).

    Weighted OLS with Newey-West standard errors at a fixed lag.  When
    ``running_var`` is supplied the design gains R and R x Post columns,
    turning the estimator into the interacted local-linear discontinuity
    fit; beta remains the coefficient on Post.
    """
    y = np.asarray(gaps, dtype=np.float64)
    post = np.asarray(post_flags, dtype=bool).astype(np.float64)
    if y.shape != post.shape or y.ndim != 1:
        raise ValueError("gaps and post_flags must be 1-d and equal length")
    if post.min() == post.max():
        raise ValueError("need both pre and post weeks")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    cols = [np.ones_like(y), post]
    if running_var is not None:
        r = np.asarray(running_var, dtype=np.float64)
        cols += [r, r * post]
    X = np.column_stack(cols)
    XtWX = X.T @ (X * w[:, None])
    beta_hat = np.linalg.solve(XtWX, X.T @ (w * y))
    resid = y - X @ beta_hat
    cov = _newey_west_cov(X, resid, w, hac_lags)
    se = float(np.sqrt(max(cov[1, 1], 0.0)))
    beta = float(beta_hat[1])
    if se > 0.0:
        p = float(2.0 * sps.norm.sf(abs(beta) / se))
    else:
        p = 0.0 if beta != 0.0 else 1.0
    crit = float(sps.norm.ppf(0.975))
    return RegressionResult(beta, se, beta - crit * se, beta + crit * se, p)


def two_way_fe_did(panel: Sequence[PanelCell]) -> tuple[float, float]:
    """Two-way fixed-effects estimate of the Minority x Post interaction.

    Double-demeans outcome and treatment over units and weeks (iterated
    to convergence, which is exact demeaning for balanced panels) and
    regresses the residualised outcome on the residualised interaction.
    Returns (estimate, HC1 robust standard error).
    """
    if len(panel) == 0:
        raise ValueError("empty panel")
    units = sorted({c.unit for c in panel})
    weeks = sorted({c.week for c in panel})
    if len(units) < 2 or len(weeks) < 2:
        raise ValueError("panel needs at least two units and two weeks")
    seen = set()
    for c in panel:
        key = (c.unit, c.week)
        if key in seen:
            raise ValueError(f"duplicate panel cell {key!r}")
        seen.add(key)
    uix = {u: k for k, u in enumerate(units)}
    wix = {w: k for k, w in enumerate(weeks)}
    ui = np.array([uix[c.unit] for c in panel])
    wi = np.array([wix[c.week] for c in panel])
    y = np.array([c.outcome for c in panel], dtype=np.float64)
    d = np.array([float(c.minority and c.post) for c in panel])

    def demean(v: np.ndarray) -> np.ndarray:
        out = v.copy()
        for _ in range(200):
            mu_u = np.bincount(ui, weights=out) / np.bincount(ui)
            out = out - mu_u[ui]
            mu_w = np.bincount(wi, weights=out) / np.bincount(wi)
            out = out - mu_w[wi]
            if max(np.abs(mu_u).max(), np.abs(mu_w).max()) < 1e-12:
                break
        return out

    y_t = demean(y)
    d_t = demean(d)
    dd = float(d_t @ d_t)
    if dd < 1e-12:
        raise ValueError("collinear design: interaction has no within-variation")
    beta = float(d_t @ y_t) / dd
    resid = y_t - beta * d_t
    n = len(panel)
    k = len(units) + len(weeks) - 1 + 1  # absorbed effects + interaction
    dof = max(n - k, 1)
    meat = float(np.sum((d_t * resid) ** 2))
    se = float(np.sqrt(n / dof * meat) / dd)
    return beta, se


def permutation_test(
    stat_fn: Callable[[np.ndarray, np.ndarray], float],
    data: Sequence[float],
    labels: Sequence,
    n_perm: int = 1000,
    seed: int = 0,
) -> float:
    """Two-sided permutation p-value with add-one smoothing.

    Labels are reshuffled uniformly (group sizes preserved by
    construction); p = (1 + #{|stat_perm| >= |stat_obs|}) / (1 + n_perm).
    A statistic that is constant across permutations yields p = 1 with a
    warning.
    """
    if n_perm < 100:
        raise ValueError("n_perm must be >= 100")
    data = np.asarray(data)
    labels = np.asarray(labels)
    if len(data) != len(labels):
        raise ValueError("data and labels must have equal length")
    rng = np.random.default_rng(seed)
    observed = float(stat_fn(data, labels))
    perm_stats = np.empty(n_perm)
    shuffled = labels.copy()
    for b in range(n_perm):
        rng.shuffle(shuffled)
        perm_stats[b] = stat_fn(data, shuffled)
    if np.ptp(perm_stats) == 0.0 and perm_stats[0] == observed:
        warnings.warn("statistic is degenerate across permutations; p = 1")
        return 1.0
    count = int(np.sum(np.abs(perm_stats) >= abs(observed)))
    return (1.0 + count) / (1.0 + n_perm)
