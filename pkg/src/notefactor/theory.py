"""Closed-form predictions for fitted rank-1 models and their Monte Carlo checks.

Implements the limiting objects the estimator converges to under truthful
and conformity-distorted reporting, and scenario runners that compare them
against actual fits on simulated data:

* truthful regime: the decentered note intercept is consistent;
* conformity regime: the note intercept converges to a distorted limit
  i_inf = i + c rho g + (1 - rho) delta - (1 - rho_bar) mean(delta);
* known-note-factor fits: estimated user factors follow the affine law
  E[f_hat] = w1 f + c (1 - w1) with w1 = sum(rho g^2) / sum(g^2), which
  compresses the estimated minority share to F(-c (1 - w1) / w1);
* note factors shrink proportionally to rho under a known-user-factor fit;
* weighted refits: the per-coordinate intercept variance follows
  sum(w^2 sigma^2) / (sum w)^2, minimised by inverse-variance weights.

Scenario runners are deterministic per seed and feed both the ``theory``
CLI subcommand and the acceptance suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import pandas as pd

from .factorization import FitConfig, WeightVector, fit
from .model import LatentParams, decenter_note_intercept
from .simulation import (
    BoundedDist,
    NoiseSpec,
    RhoSpec,
    SimConfig,
    SimTruth,
    sample_observations,
    sample_population,
)
from .twostage import two_stage_fit


# ---------------------------------------------------------------------------
# closed-form predictions
# ---------------------------------------------------------------------------

def w1(rho: np.ndarray, g: np.ndarray) -> float:
    """Attenuation slope of estimated user factors: sum(rho g^2) / sum(g^2)."""
    rho = np.asarray(rho, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if rho.shape != g.shape:
        raise ValueError("rho and g must have equal length")
    denom = float(g @ g)
    if denom == 0.0:
        raise ValueError("w1 undefined for identically zero note factors")
    return float(np.sum(rho * g * g) / denom)


def predicted_note_limit(truth: SimTruth) -> np.ndarray:
    """Limit of the fitted (centered) note intercept under conformity.

    Evaluates i_inf = i + c rho g + (1 - rho) delta - (1 - rho_bar) mean(delta)
    on mean-centered note-side quantities, with rho_bar, mean(delta) and the
    factor mean c replaced by their finite-sample values (the exact
    column-mean target of the full-data fit up to O(1/sqrt(N)) terms).
    """
    theta0 = truth.theta0
    i_c = theta0.i - theta0.i.mean()
    g_c = theta0.g - theta0.g.mean()
    mu_c = theta0.mu + theta0.i.mean() + theta0.h.mean()
    c = float(theta0.f.mean())
    delta = truth.m - (mu_c + i_c)
    rho_bar = float(truth.rho.mean())
    return (
        i_c
        + c * truth.rho * g_c
        + (1.0 - truth.rho) * delta
        - (1.0 - rho_bar) * delta.mean()
    )


def predicted_user_factor(f_u, w1_value: float, c: float, decentered: bool):
    """Expected estimated user factor under the affine attenuation law.

    Decentered estimates satisfy E[f_hat0] = w1 f + c (1 - w1); centered
    ones E[f_hat] = w1 (f - c).
    """
    if not (0.0 <= w1_value <= 1.0):
        raise ValueError("w1 must lie in [0, 1]")
    f_u = np.asarray(f_u, dtype=np.float64)
    if decentered:
        out = w1_value * f_u + c * (1.0 - w1_value)
    else:
        out = w1_value * (f_u - c)
    return float(out) if out.ndim == 0 else out


def predicted_minority_share(cdf_f: Callable[[float], float], c: float, w1_value: float) -> float:
    """Estimated minority share F(-c (1 - w1) / w1); equals F(0) at w1 = 1."""
    if w1_value == 0.0:
        raise ValueError("full collapse: minority threshold diverges at w1 = 0")
    if not (0.0 < w1_value <= 1.0 + 1e-9):
        raise ValueError("w1 must lie in (0, 1]")
    if c <= 0.0:
        raise ValueError("c must be > 0")
    w1_value = min(w1_value, 1.0)  # absorb summation round-off at rho == 1
    return float(cdf_f(-c * (1.0 - w1_value) / w1_value))


def predicted_note_factor(g_n, rho_n, f: np.ndarray):
    """Expected estimated note factor g rho (1 - c sum(f) / sum(f^2)).

    With mean-zero user factors this reduces to g rho; the statement is
    approximate and used as a directional shrinkage check.
    """
    f = np.asarray(f, dtype=np.float64)
    denom = float(f @ f)
    if denom == 0.0:
        raise ValueError("degenerate user factors (sum of squares is zero)")
    c = float(f.mean())
    coef = 1.0 - c * float(f.sum()) / denom
    out = np.asarray(g_n, dtype=np.float64) * np.asarray(rho_n, dtype=np.float64) * coef
    return float(out) if out.ndim == 0 else out


def intercept_variance_formula(w: np.ndarray, sigma2: np.ndarray) -> float:
    """Per-coordinate asymptotic variance sum(w^2 sigma^2) / (sum w)^2."""
    w = np.asarray(w, dtype=np.float64)
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if w.shape != sigma2.shape:
        raise ValueError("w and sigma2 must have equal length")
    total = float(w.sum())
    if total <= 0.0:
        raise ValueError("sum of weights must be positive")
    return float(np.sum(w * w * sigma2) / total**2)


def decode_intercepts(theta: LatentParams, weights: np.ndarray | None = None) -> np.ndarray:
    """Weighted column-mean decoding of the note intercepts.

    Reconstructs the fitted matrix implied by ``theta`` and returns its
    per-note weighted column means minus the weighted grand mean.  For
    the weighted ridge fit this equals the weighted column means of the
    data (the intercept first-order condition pins them together as the
    regularizer vanishes), which is the decoding whose per-coordinate
    variance follows sum(w^2 sigma^2) / (sum w)^2.  With uniform weights
    and canonical parameters it coincides with ``theta.i``.
    """
    w = np.ones(theta.n_users) if weights is None else np.asarray(weights, dtype=np.float64)
    if len(w) != theta.n_users:
        raise ValueError("weights length must equal the number of users")
    total = float(w.sum())
    col = theta.mu + float(w @ theta.h) / total + theta.i + theta.g * (float(w @ theta.f) / total)
    return col - col.mean()


def align_minority_positive(theta: LatentParams, f_true: np.ndarray) -> LatentParams:
    """Resolve the global factor-sign gauge against known true factors.

    Orients the fitted factors so that true-minority users (below-average
    truth) map to positive estimates, i.e. <f_hat, f_true - mean> <= 0.
    The product f g and all predictions are unchanged.
    """
    f_true = np.asarray(f_true, dtype=np.float64)
    centered = f_true - f_true.mean()
    if float(theta.f @ centered) > 0.0:
        return LatentParams(theta.mu, theta.h, theta.i, -theta.f, -theta.g)
    return theta


def rmse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.sqrt(np.mean((a - b) ** 2)))


# ---------------------------------------------------------------------------
# scenario configurations
# ---------------------------------------------------------------------------

THEORY_LAMBDA = 1e-6  # vanishing regularization, matching the limit statements


def _base_config(**kw) -> SimConfig:
    defaults = dict(
        mu=0.5,
        mu_f=0.5,
        dist_f=BoundedDist("truncnormal", 0.5, 1.0),
        dist_g=BoundedDist("truncnormal", 0.0, 0.35),
        consensus=BoundedDist("uniform", 0.0, 0.5),
    )
    defaults.update(kw)
    return SimConfig(**defaults)


def truthful_config(size: int, seed: int) -> SimConfig:
    return _base_config(
        n_users=size, n_notes=size, p_observe=0.3,
        noise=NoiseSpec("constant", sigma=0.1),
        rho=RhoSpec("linear", kappa=0.0), seed=seed,
    )


def conformity_config(size: int, seed: int) -> SimConfig:
    return _base_config(
        n_users=size, n_notes=size, p_observe=1.0,
        noise=NoiseSpec("constant", sigma=0.05),
        rho=RhoSpec("linear", kappa=0.8), seed=seed,
    )


def clamped_config(n_users: int, n_notes: int, kappa: float, seed: int) -> SimConfig:
    return _base_config(
        n_users=n_users, n_notes=n_notes, p_observe=1.0,
        dist_f=BoundedDist("uniform", 0.5, 1.5),
        noise=NoiseSpec("constant", sigma=0.05),
        rho=RhoSpec("linear", kappa=kappa), seed=seed,
    )


def heteroskedastic_config(size: int, seed: int) -> SimConfig:
    # modest user-side heterogeneity: the variance formula describes the
    # noise-averaging term; large h/f spreads add a feasible-weight
    # fluctuation term that only dies off asymptotically
    return _base_config(
        n_users=size, n_notes=size, p_observe=1.0,
        dist_h=BoundedDist("truncnormal", 0.0, 0.1),
        dist_f=BoundedDist("truncnormal", 0.5, 0.3),
        noise=NoiseSpec("two_group", sigma_low=0.05, sigma_high=0.5, frac_high=0.5),
        rho=RhoSpec("linear", kappa=0.0), seed=seed,
    )


def theory_fit_config(**kw) -> FitConfig:
    base = dict(lambda_u=THEORY_LAMBDA, lambda_n=THEORY_LAMBDA, rel_tol=1e-9, max_sweeps=400)
    base.update(kw)
    return FitConfig(**base)


# ---------------------------------------------------------------------------
# scenario runners
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruthfulOutcome:
    rmse_decentered: float
    rmse_small: float
    rmse_large: float


def run_truthful_scenario(
    size: int = 300,
    small: int = 150,
    large: int = 600,
    n_seeds: int = 10,
    seed: int = 101,
) -> TruthfulOutcome:
    """Consistency of the decentered note intercept under truthful reporting."""

    def one_rmse(sz: int, sd: int) -> float:
        cfg = truthful_config(sz, sd)
        truth = sample_population(cfg)
        obs = sample_observations(truth)
        result = fit(obs, theory_fit_config())
        theta = align_minority_positive(result.params, truth.theta0.f)
        i0_hat = decenter_note_intercept(theta.i, theta.g, cfg.mu_f)
        i0_true = truth.theta0.i - truth.theta0.i.mean()
        return rmse(i0_hat, i0_true)

    main = one_rmse(size, seed)
    small_vals = [one_rmse(small, seed + 1 + k) for k in range(n_seeds)]
    large_vals = [one_rmse(large, seed + 1 + k) for k in range(n_seeds)]
    return TruthfulOutcome(main, float(np.mean(small_vals)), float(np.mean(large_vals)))


@dataclass(frozen=True)
class ConformityOutcome:
    rmse_vs_limit: float
    rmse_vs_truth: float


def run_conformity_scenario(size: int = 500, seed: int = 202) -> ConformityOutcome:
    """Fitted intercepts track the distorted limit, not the true helpfulness."""
    cfg = conformity_config(size, seed)
    truth = sample_population(cfg)
    obs = sample_observations(truth)
    result = fit(obs, theory_fit_config())
    i_hat = result.params.i
    i_inf = predicted_note_limit(truth)
    i_true_centered = truth.theta0.i - truth.theta0.i.mean()
    return ConformityOutcome(rmse(i_hat, i_inf), rmse(i_hat, i_true_centered))


@dataclass(frozen=True)
class ClampedOutcome:
    slope: float
    intercept: float
    w1_value: float
    predicted_intercept: float
    minority_share: float
    predicted_share: float
    true_share: float


def run_clamped_scenario(
    kappa: float,
    n_users: int = 800,
    n_notes: int = 400,
    n_seeds: int = 10,
    seed: int = 303,
) -> ClampedOutcome:
    """Known-g fits: affine user-factor law and minority-share compression.

    The note factor is frozen at its true value, so the factor scale and
    sign are pinned; the fitted user factor is mean-centered and shifted
    by the known mean c to the decentered scale before comparison.
    """
    slopes, intercepts, w1s, shares, pred_shares, true_shares = [], [], [], [], [], []
    for k in range(n_seeds):
        cfg = clamped_config(n_users, n_notes, kappa, seed + k)
        truth = sample_population(cfg)
        obs = sample_observations(truth)
        result = fit(obs, theory_fit_config(), clamp_g=truth.theta0.g)
        c = cfg.mu_f
        f_hat0 = (result.params.f - result.params.f.mean()) + c
        f_true = truth.theta0.f
        slope, icept = np.polyfit(f_true, f_hat0, 1)
        w1_val = w1(truth.rho, truth.theta0.g)
        slopes.append(slope)
        intercepts.append(icept)
        w1s.append(w1_val)
        shares.append(float(np.mean(f_hat0 < 0.0)))
        pred_shares.append(predicted_minority_share(cfg.dist_f.cdf, c, w1_val))
        true_shares.append(float(np.mean(f_true < 0.0)))
    return ClampedOutcome(
        slope=float(np.mean(slopes)),
        intercept=float(np.mean(intercepts)),
        w1_value=float(np.mean(w1s)),
        predicted_intercept=float(np.mean([0.5 * (1.0 - w) for w in w1s])),
        minority_share=float(np.mean(shares)),
        predicted_share=float(np.mean(pred_shares)),
        true_share=float(np.mean(true_shares)),
    )


@dataclass(frozen=True)
class VarianceOutcome:
    var_uniform: float
    var_feasible: float
    var_oracle_ivw: float
    var_oracle_isd: float
    formula_uniform: float
    formula_ivw: float
    formula_isd: float


def run_heteroskedastic_scenario(
    size: int = 200,
    n_reps: int = 200,
    coordinate: int = 0,
    seed: int = 404,
) -> VarianceOutcome:
    """Replicate variance of one decoded note intercept across weightings.

    The population is fixed; each replicate redraws the rating noise and
    records the decoded intercept of a fixed note under four estimators:
    the uniform-weight fit (stage 1), the feasible two-stage fit
    (estimated inverse-variance weights), and oracle fits with the weight
    families 1/sigma and 1/sigma^2 evaluated at the true noise levels.
    The formula sum(w^2 sigma^2) / (sum w)^2 describes the known-weight
    estimators; the feasible fit carries the efficiency-ordering claim.
    """
    cfg = heteroskedastic_config(size, seed)
    truth = sample_population(cfg)
    sigma2 = truth.sigma_u**2
    w_ivw = WeightVector(1.0 / sigma2)
    w_isd = WeightVector(1.0 / truth.sigma_u)
    uniform_vals, feasible_vals, ivw_vals, isd_vals = [], [], [], []
    for rep in range(n_reps):
        obs = sample_observations(truth, seed=seed + 1000 + rep)
        ts = two_stage_fit(obs, theory_fit_config())
        uniform_vals.append(float(decode_intercepts(ts.stage1)[coordinate]))
        feasible_vals.append(float(decode_intercepts(ts.theta_ts, ts.weights.w)[coordinate]))
        warm = theory_fit_config(warm_start=ts.stage1)
        oracle_ivw = fit(obs, warm, w_ivw).params
        oracle_isd = fit(obs, warm, w_isd).params
        ivw_vals.append(float(decode_intercepts(oracle_ivw, w_ivw.w)[coordinate]))
        isd_vals.append(float(decode_intercepts(oracle_isd, w_isd.w)[coordinate]))
    return VarianceOutcome(
        var_uniform=float(np.var(uniform_vals)),
        var_feasible=float(np.var(feasible_vals)),
        var_oracle_ivw=float(np.var(ivw_vals)),
        var_oracle_isd=float(np.var(isd_vals)),
        formula_uniform=intercept_variance_formula(np.ones(size), sigma2),
        formula_ivw=intercept_variance_formula(1.0 / sigma2, sigma2),
        formula_isd=intercept_variance_formula(1.0 / truth.sigma_u, sigma2),
    )


@dataclass(frozen=True)
class NoteFactorOutcome:
    corr_with_prediction: float
    shrink_low_controversy: float
    shrink_high_controversy: float


def run_note_factor_scenario(size: int = 500, seed: int = 505) -> NoteFactorOutcome:
    """Known-f fit: note factors shrink toward zero with controversy."""
    cfg = conformity_config(size, seed)
    truth = sample_population(cfg)
    obs = sample_observations(truth)
    result = fit(obs, theory_fit_config(), clamp_f=truth.theta0.f)
    g_hat = result.params.g
    predicted = predicted_note_factor(truth.theta0.g, truth.rho, truth.theta0.f)
    corr = float(np.corrcoef(g_hat, predicted)[0, 1])
    g_true = truth.theta0.g
    informative = np.abs(g_true) > 0.1
    ratio = np.full_like(g_true, np.nan)
    ratio[informative] = g_hat[informative] / g_true[informative]
    lo = truth.c <= np.quantile(truth.c, 0.25)
    hi = truth.c >= np.quantile(truth.c, 0.75)
    return NoteFactorOutcome(
        corr_with_prediction=corr,
        shrink_low_controversy=float(np.nanmedian(ratio[lo & informative])),
        shrink_high_controversy=float(np.nanmedian(ratio[hi & informative])),
    )


# ---------------------------------------------------------------------------
# the assembled suite
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TheoryClaim:
    name: str
    predicted: float
    observed: float
    tolerance: float
    passed: bool
    detail: str = ""


@dataclass
class TheoryReport:
    claims: list[TheoryClaim] = field(default_factory=list)

    def add(self, name, predicted, observed, tolerance, passed, detail=""):
        self.claims.append(
            TheoryClaim(name, float(predicted), float(observed), float(tolerance), bool(passed), detail)
        )

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.claims)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "claim": c.name,
                    "predicted": c.predicted,
                    "observed": c.observed,
                    "tolerance": c.tolerance,
                    "passed": c.passed,
                    "detail": c.detail,
                }
                for c in self.claims
            ]
        )

    def summary_lines(self) -> list[str]:
        lines = []
        for c in self.claims:
            status = "PASS" if c.passed else "FAIL"
            lines.append(
                f"[{status}] {c.name}: predicted={c.predicted:.6g} observed={c.observed:.6g} "
                f"tol={c.tolerance:.3g}{' | ' + c.detail if c.detail else ''}"
            )
        verdict = "all claims passed" if self.all_passed else "SOME CLAIMS FAILED"
        lines.append(f"=> {verdict} ({sum(c.passed for c in self.claims)}/{len(self.claims)})")
        return lines


@dataclass(frozen=True)
class SuiteScale:
    """Sizes and replicate counts for one run of the theory suite."""

    truthful_size: int = 300
    truthful_small: int = 150
    truthful_large: int = 600
    truthful_seeds: int = 10
    conformity_size: int = 500
    clamped_users: int = 800
    clamped_notes: int = 400
    clamped_seeds: int = 10
    minority_users: int = 1200
    minority_notes: int = 400
    minority_seeds: int = 6
    hetero_size: int = 200
    hetero_reps: int = 250
    note_factor_size: int = 500


FULL_SCALE = SuiteScale()
QUICK_SCALE = SuiteScale(
    truthful_size=150, truthful_small=80, truthful_large=320, truthful_seeds=3,
    conformity_size=250, clamped_users=400, clamped_notes=200, clamped_seeds=3,
    minority_users=800, minority_notes=200, minority_seeds=2,
    hetero_size=150, hetero_reps=150, note_factor_size=250,
)

MINORITY_KAPPA_GRID = (1.0, 0.8, 0.4, 0.0)


def run_theory_suite(
    scale: SuiteScale = FULL_SCALE,
    seed: int = 0,
    self_test: bool = False,
) -> TheoryReport:
    """Evaluate every closed-form claim against Monte Carlo fits.

    ``self_test`` additionally injects a deliberately wrong user-factor
    prediction (w1 squared in place of w1), which must fail; use it to
    confirm the harness can reject bad predictions.
    """
    report = TheoryReport()

    t = run_truthful_scenario(
        scale.truthful_size, scale.truthful_small, scale.truthful_large,
        scale.truthful_seeds, seed=seed + 101,
    )
    report.add("truthful_decentered_rmse", 0.0, t.rmse_decentered, 0.05,
               t.rmse_decentered <= 0.05)
    report.add("truthful_consistency_scaling", t.rmse_small, t.rmse_large,
               0.0, t.rmse_large < t.rmse_small,
               detail="mean RMSE must strictly decrease as U=N grows")

    cshrink = run_conformity_scenario(scale.conformity_size, seed=seed + 202)
    report.add("conformity_limit_rmse", 0.0, cshrink.rmse_vs_limit, 0.05,
               cshrink.rmse_vs_limit <= 0.05)
    ratio = cshrink.rmse_vs_truth / max(cshrink.rmse_vs_limit, 1e-12)
    report.add("conformity_bias_ratio", 2.0, ratio, 0.0, ratio >= 2.0,
               detail="RMSE to truth must dominate RMSE to the distorted limit")

    cl = run_clamped_scenario(
        0.8, scale.clamped_users, scale.clamped_notes, scale.clamped_seeds,
        seed=seed + 303,
    )
    slope_target = cl.w1_value**2 if self_test else cl.w1_value
    report.add("user_factor_slope", slope_target, cl.slope, 0.05,
               abs(cl.slope - slope_target) <= 0.05,
               detail="self-test: wrong w1^2 prediction injected" if self_test else "")
    report.add("user_factor_intercept", cl.predicted_intercept, cl.intercept, 0.05,
               abs(cl.intercept - cl.predicted_intercept) <= 0.05)

    shares, preds, w1s = [], [], []
    for j, kappa in enumerate(MINORITY_KAPPA_GRID):
        mo = run_clamped_scenario(
            kappa, scale.minority_users, scale.minority_notes, scale.minority_seeds,
            seed=seed + 404 + 41 * j,
        )
        shares.append(mo.minority_share)
        preds.append(mo.predicted_share)
        w1s.append(mo.w1_value)
        report.add(
            f"minority_share_kappa_{kappa:g}", mo.predicted_share, mo.minority_share,
            0.03, abs(mo.minority_share - mo.predicted_share) <= 0.03,
        )
        if mo.w1_value < 0.999:
            report.add(
                f"minority_compression_kappa_{kappa:g}", mo.true_share, mo.minority_share,
                0.0, mo.minority_share < mo.true_share,
                detail="estimated minority share must fall below the true share",
            )
    order = np.argsort(w1s)
    ordered = np.asarray(shares)[order]
    report.add("minority_share_monotone_in_w1", 0.0, float(np.min(np.diff(ordered))),
               0.0, bool(np.all(np.diff(ordered) >= -1e-12)),
               detail="share non-decreasing across the w1 grid")

    v = run_heteroskedastic_scenario(scale.hetero_size, scale.hetero_reps, seed=seed + 404)
    report.add("variance_ordering_feasible", v.var_uniform, v.var_feasible, 0.0,
               v.var_feasible <= v.var_uniform,
               detail="estimated inverse-variance weights must not increase the variance")
    rel_u = abs(v.var_uniform / v.formula_uniform - 1.0)
    rel_w = abs(v.var_oracle_ivw / v.formula_ivw - 1.0)
    report.add("variance_formula_uniform", v.formula_uniform, v.var_uniform, 0.2, rel_u <= 0.2,
               detail=f"relative error {rel_u:.3f}")
    report.add("variance_formula_ivw", v.formula_ivw, v.var_oracle_ivw, 0.2, rel_w <= 0.2,
               detail=f"relative error {rel_w:.3f}")
    report.add("variance_family_minimized", min(v.var_uniform, v.var_oracle_isd),
               v.var_oracle_ivw, 0.0,
               v.var_oracle_ivw <= min(v.var_uniform, v.var_oracle_isd)
               and v.formula_ivw <= min(v.formula_uniform, v.formula_isd),
               detail="inverse-variance beats uniform and inverse-sd, empirically and in formula")

    nf = run_note_factor_scenario(scale.note_factor_size, seed=seed + 606)
    report.add("note_factor_correlation", 1.0, nf.corr_with_prediction, 0.1,
               nf.corr_with_prediction >= 0.9)
    report.add("note_factor_shrinkage", nf.shrink_low_controversy,
               nf.shrink_high_controversy, 0.0,
               nf.shrink_high_controversy < nf.shrink_low_controversy,
               detail="controversial notes shrink more")
    return report
