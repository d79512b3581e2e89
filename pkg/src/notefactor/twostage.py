"""Two-stage auditing-by-predictive-stability estimator.

Stage 1 fits the unweighted rank-1 model.  Per-user residual variances
from that fit become inverse-variance weights (floored to avoid blow-ups),
and stage 2 refits the same model warm-started at the stage-1 solution
under those weights.  Raters whose evaluations are stable relative to the
fitted structure gain influence, independent of whether they agree with
the majority.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .factorization import FitConfig, FitResult, WeightVector, fit
from .model import LatentParams, ObservationSet, predict_entries

WEIGHT_FLOOR = 1e-4

MEAN_SQUARE = "mean_square"
SAMPLE_VARIANCE = "sample_variance"


@dataclass(frozen=True)
class ResidualTable:
    """First-stage residuals e_un = r_un - prediction, one row per observed pair."""

    u_idx: np.ndarray
    n_idx: np.ndarray
    residuals: np.ndarray
    per_user_counts: np.ndarray

    def __post_init__(self):
        for name in ("u_idx", "n_idx", "residuals", "per_user_counts"):
            getattr(self, name).setflags(write=False)


@dataclass(frozen=True)
class UserVariance:
    """Per-user residual variance estimates; absent users flagged, not zeroed."""

    sigma2: np.ndarray
    present: np.ndarray

    def __post_init__(self):
        self.sigma2.setflags(write=False)
        self.present.setflags(write=False)


@dataclass(frozen=True)
class TwoStageResult:
    theta_ts: LatentParams
    stage1: LatentParams
    weights: WeightVector
    sigma2: np.ndarray
    stage1_result: FitResult
    stage2_result: FitResult
    reweight_rounds: int


def compute_residuals(obs: ObservationSet, theta: LatentParams) -> ResidualTable:
    """Residuals of the observed ratings against a fitted parameter bundle."""
    if theta.n_users != obs.n_users or theta.n_notes != obs.n_notes:
        raise ValueError(
            f"parameter dimensions ({theta.n_users}, {theta.n_notes}) do not match "
            f"observation set ({obs.n_users}, {obs.n_notes})"
        )
    e = obs.ratings - predict_entries(theta, obs.u_idx, obs.n_idx)
    counts = np.bincount(obs.u_idx, minlength=obs.n_users)
    return ResidualTable(obs.u_idx.copy(), obs.n_idx.copy(), e, counts)


def estimate_user_variance(res: ResidualTable, convention: str = MEAN_SQUARE) -> UserVariance:
    """Per-user variance of first-stage residuals.

    ``mean_square`` (default) divides the sum of squared residuals by the
    user's rating count N_u; ``sample_variance`` mean-centers per user and
    divides by N_u - 1.  Users with no residuals are flagged absent; under
    ``sample_variance`` a single-rating user degenerates to 0 with a
    warning (the downstream weight floor absorbs it).
    """
    if convention not in (MEAN_SQUARE, SAMPLE_VARIANCE):
        raise ValueError(f"unknown variance convention {convention!r}")
    n_users = len(res.per_user_counts)
    counts = res.per_user_counts.astype(np.float64)
    present = res.per_user_counts > 0
    sq = np.bincount(res.u_idx, weights=res.residuals**2, minlength=n_users)
    if convention == MEAN_SQUARE:
        sigma2 = np.divide(sq, counts, out=np.zeros(n_users), where=present)
    else:
        sums = np.bincount(res.u_idx, weights=res.residuals, minlength=n_users)
        centered_sq = sq - np.divide(sums**2, counts, out=np.zeros(n_users), where=present)
        denom = counts - 1.0
        ok = denom > 0
        sigma2 = np.divide(centered_sq, denom, out=np.zeros(n_users), where=ok)
        singles = present & ~ok
        if np.any(singles):
            warnings.warn(
                f"{int(singles.sum())} user(s) with a single rating have undefined "
                "sample variance; set to 0 (weight floor applies)"
            )
        sigma2 = np.maximum(sigma2, 0.0)  # guard tiny negative rounding
    return UserVariance(sigma2, present)


def weights_from_variance(v: UserVariance, floor: float = WEIGHT_FLOOR) -> WeightVector:
    """Inverse-variance weights w_u = 1 / max(sigma_u^2, floor)."""
    if floor <= 0.0:
        raise ValueError("floor must be > 0")
    return WeightVector(1.0 / np.maximum(v.sigma2, floor))


def two_stage_fit(
    obs: ObservationSet,
    cfg: FitConfig | None = None,
    *,
    variance_convention: str = MEAN_SQUARE,
    weight_floor: float = WEIGHT_FLOOR,
    max_reweight_rounds: int = 1,
    reweight_rel_tol: float = 1e-3,
) -> TwoStageResult:
    """Run the full two-stage procedure on a (pre-filtered) observation set.

    The stage-2 fit is warm-started at the stage-1 solution and carried
    out under weights rescaled to mean 1, which makes the procedure
    invariant to the overall weight scale (a uniform weight vector
    reproduces stage 1 exactly) while the reported weights keep their raw
    1 / max(sigma^2, floor) values.  ``max_reweight_rounds`` > 1 repeats
    the residual/variance/refit cycle, stopping early once the largest
    relative weight change falls below ``reweight_rel_tol``.
    """
    cfg = cfg or FitConfig()
    if max_reweight_rounds < 1:
        raise ValueError("max_reweight_rounds must be >= 1")
    stage1_result = fit(obs, cfg)
    stage1 = stage1_result.params

    current = stage1_result
    weights: WeightVector | None = None
    sigma2: np.ndarray | None = None
    rounds = 0
    for rounds in range(1, max_reweight_rounds + 1):
        res = compute_residuals(obs, current.params)
        variance = estimate_user_variance(res, variance_convention)
        sigma2 = variance.sigma2
        new_weights = weights_from_variance(variance, weight_floor)
        if np.all(variance.sigma2 <= weight_floor):
            warnings.warn(
                "every user's residual variance is at or below the weight floor; "
                "weights degenerate to uniform"
            )
        if weights is not None:
            delta = np.max(np.abs(new_weights.w - weights.w) / weights.w)
            if delta < reweight_rel_tol:
                weights = new_weights
                break
        weights = new_weights
        normalized = WeightVector(weights.w / weights.w.mean())
        if np.all(normalized.w == normalized.w[0]):
            # identical objective up to scale -> identical minimizer
            break
        stage2_cfg = replace(cfg, warm_start=current.params)
        current = fit(obs, stage2_cfg, normalized)

    assert weights is not None and sigma2 is not None
    return TwoStageResult(
        theta_ts=current.params,
        stage1=stage1,
        weights=weights,
        sigma2=sigma2,
        stage1_result=stage1_result,
        stage2_result=current,
        reweight_rounds=rounds,
    )
