"""Regularized rank-1 least-squares fitting.

Solves, over observed (u, n) pairs with optional per-user weights w_u,

    sum w_u (r_un - mu - h_u - i_n - f_u g_n)^2
        + lam_h ||h||^2 + lam_f ||f||^2 + lam_i ||i||^2 + lam_g ||g||^2

by block coordinate descent with closed-form ridge updates for each block
(mu, h, i, f, g).  Every block update is an exact minimisation, so the
objective is non-increasing within and across sweeps; the per-sweep trace
is kept on the result for property tests.  All reductions use fixed-order
segmented sums, so runs are bitwise reproducible for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LatentParams, ObservationSet, canonical_center

DEFAULT_MIN_RATINGS_PER_NOTE = 5
DEFAULT_MIN_NOTES_PER_RATER = 10


@dataclass(frozen=True)
class WeightVector:
    """Strictly positive per-user weights for the weighted ridge objective."""

    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64, copy=True)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        if w.ndim != 1:
            raise ValueError("weights must be a 1-d vector")
        if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
            raise ValueError("weights must be strictly positive and finite")

    def __len__(self) -> int:
        return len(self.w)


@dataclass(frozen=True)
class FitConfig:
    """Solver configuration.

    ``lambda_u`` penalises the user-side blocks (h, f), ``lambda_n`` the
    note-side blocks (i, g).  When left as None they default to
    0.03 * |Omega| / (U + N), shrinking with observation density.  The
    four per-block knobs override the paired values when set.  Runs are
    deterministic regardless of the ``deterministic`` flag (single
    fixed-order reductions); the flag is kept as an explicit contract.
    """

    lambda_u: float | None = None
    lambda_n: float | None = None
    lambda_h: float | None = None
    lambda_f: float | None = None
    lambda_i: float | None = None
    lambda_g: float | None = None
    max_sweeps: int = 500
    rel_tol: float = 1e-8
    seed: int = 0
    init_scale: float = 0.1
    warm_start: LatentParams | None = None
    deterministic: bool = True

    def __post_init__(self):
        if self.rel_tol <= 0.0:
            raise ValueError("rel_tol must be > 0")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        for name in ("lambda_u", "lambda_n", "lambda_h", "lambda_f", "lambda_i", "lambda_g"):
            v = getattr(self, name)
            if v is not None and v < 0.0:
                raise ValueError(f"{name} must be >= 0")

    def resolve_lambdas(self, obs: ObservationSet) -> tuple[float, float, float, float]:
        """Return (lam_h, lam_f, lam_i, lam_g) with density-scaled defaults."""
        default = 0.03 * obs.n_entries / max(obs.n_users + obs.n_notes, 1)
        lu = self.lambda_u if self.lambda_u is not None else default
        ln = self.lambda_n if self.lambda_n is not None else default
        return (
            self.lambda_h if self.lambda_h is not None else lu,
            self.lambda_f if self.lambda_f is not None else lu,
            self.lambda_i if self.lambda_i is not None else ln,
            self.lambda_g if self.lambda_g is not None else ln,
        )


@dataclass(frozen=True)
class FitResult:
    params: LatentParams
    objective: float
    n_sweeps: int
    converged: bool
    objective_trace: tuple[float, ...]


def _objective(u, n, r, w_e, mu, h, i, f, g, lams) -> float:
    resid = r - (mu + h[u] + i[n] + f[u] * g[n])
    lam_h, lam_f, lam_i, lam_g = lams
    return float(
        np.sum(w_e * resid * resid)
        + lam_h * (h @ h)
        + lam_f * (f @ f)
        + lam_i * (i @ i)
        + lam_g * (g @ g)
    )


def fit(
    obs: ObservationSet,
    cfg: FitConfig | None = None,
    weights: WeightVector | None = None,
    *,
    clamp_g: np.ndarray | None = None,
    clamp_f: np.ndarray | None = None,
) -> FitResult:
    """Fit the (optionally weighted) regularized rank-1 model.

    Default weights are 1.  The returned parameters are canonically
    centered and sign-fixed; the reported objective is the solver's value
    at its final iterate (centering re-parameterises the same fitted
    matrix but redistributes the penalty terms).

    ``clamp_g`` / ``clamp_f`` freeze one factor side at the supplied
    values and skip updates for it; clamped fits are returned raw
    (no centering or sign fixing) so the clamped side is preserved
    exactly.  Used by the theory suite's known-factor scenarios.
    """
    cfg = cfg or FitConfig()
    if obs.n_entries == 0:
        raise ValueError("cannot fit an empty observation set")
    if not np.all(np.isfinite(obs.ratings)):
        bad = int(np.flatnonzero(~np.isfinite(obs.ratings))[0])
        raise ValueError(
            f"non-finite rating at entry {bad} "
            f"(user {obs.user_ids[obs.u_idx[bad]]!r}, note {obs.note_ids[obs.n_idx[bad]]!r})"
        )
    if weights is not None and len(weights) != obs.n_users:
        raise ValueError(f"weights length {len(weights)} != n_users {obs.n_users}")
    if clamp_g is not None and clamp_f is not None:
        raise ValueError("cannot clamp both factor sides")

    U, N = obs.n_users, obs.n_notes
    u, n, r = obs.u_idx, obs.n_idx, obs.ratings
    w_user = weights.w if weights is not None else np.ones(U)
    w_e = w_user[u]
    lams = cfg.resolve_lambdas(obs)
    lam_h, lam_f, lam_i, lam_g = lams

    if cfg.warm_start is not None:
        ws = cfg.warm_start
        if ws.n_users != U or ws.n_notes != N:
            raise ValueError("warm start dimensions do not match observation set")
        mu = float(ws.mu)
        h, i = ws.h.copy(), ws.i.copy()
        f, g = ws.f.copy(), ws.g.copy()
    else:
        rng = np.random.default_rng(cfg.seed)
        mu = float(np.sum(w_e * r) / np.sum(w_e))
        h, i = np.zeros(U), np.zeros(N)
        f = rng.uniform(-cfg.init_scale, cfg.init_scale, size=U)
        g = rng.uniform(-cfg.init_scale, cfg.init_scale, size=N)
    if clamp_g is not None:
        g = np.array(clamp_g, dtype=np.float64, copy=True)
        if len(g) != N:
            raise ValueError("clamp_g length must equal n_notes")
    if clamp_f is not None:
        f = np.array(clamp_f, dtype=np.float64, copy=True)
        if len(f) != U:
            raise ValueError("clamp_f length must equal n_users")

    sum_w = float(np.sum(w_e))
    trace = [_objective(u, n, r, w_e, mu, h, i, f, g, lams)]
    converged = False
    sweeps = 0
    for sweeps in range(1, cfg.max_sweeps + 1):
        # mu block (unpenalised weighted mean of partial residuals)
        mu = float(np.sum(w_e * (r - h[u] - i[n] - f[u] * g[n])) / sum_w)
        # h block
        num = np.bincount(u, weights=w_e * (r - mu - i[n] - f[u] * g[n]), minlength=U)
        den = np.bincount(u, weights=w_e, minlength=U) + lam_h
        h = num / den
        # i block
        num = np.bincount(n, weights=w_e * (r - mu - h[u] - f[u] * g[n]), minlength=N)
        den = np.bincount(n, weights=w_e, minlength=N) + lam_i
        i = num / den
        # factor blocks share the intercept-adjusted residual; a zero
        # denominator (possible only at lam = 0 with a degenerate opposite
        # factor) leaves the coordinate at 0, a valid minimizer there
        core = r - mu - h[u] - i[n]
        if clamp_f is None:
            num = np.bincount(u, weights=w_e * g[n] * core, minlength=U)
            den = np.bincount(u, weights=w_e * g[n] * g[n], minlength=U) + lam_f
            f = np.divide(num, den, out=np.zeros(U), where=den > 0.0)
        if clamp_g is None:
            num = np.bincount(n, weights=w_e * f[u] * core, minlength=N)
            den = np.bincount(n, weights=w_e * f[u] * f[u], minlength=N) + lam_g
            g = np.divide(num, den, out=np.zeros(N), where=den > 0.0)

        trace.append(_objective(u, n, r, w_e, mu, h, i, f, g, lams))
        prev, cur = trace[-2], trace[-1]
        if abs(prev - cur) < cfg.rel_tol * max(abs(prev), abs(cur), 1e-300):
            converged = True
            break

    params = LatentParams(mu, h, i, f, g)
    if clamp_g is None and clamp_f is None:
        params = fix_factor_signs(canonical_center(params))
    return FitResult(
        params=params,
        objective=trace[-1],
        n_sweeps=sweeps,
        converged=converged,
        objective_trace=tuple(trace),
    )


def fix_factor_signs(theta: LatentParams) -> LatentParams:
    """Orient factors so the majority of users carry a negative factor.

    Flips (f, g) -> (-f, -g) iff strictly positive entries of f outnumber
    strictly negative ones; on an exact count tie, flips iff sum(f) > 0.
    The product f_u * g_n, and hence every prediction, is unchanged.
    """
    n_pos = int(np.sum(theta.f > 0.0))
    n_neg = int(np.sum(theta.f < 0.0))
    flip = n_pos > n_neg or (n_pos == n_neg and float(theta.f.sum()) > 0.0)
    if not flip:
        return theta
    return LatentParams(theta.mu, theta.h, theta.i, -theta.f, -theta.g)


def filter_observations(
    obs: ObservationSet,
    min_ratings_per_note: int = DEFAULT_MIN_RATINGS_PER_NOTE,
    min_notes_per_rater: int = DEFAULT_MIN_NOTES_PER_RATER,
) -> ObservationSet:
    """Largest subset where every note keeps >= min ratings and every rater >= min notes.

    Computed by alternating removal to a fixpoint; the result may be
    empty.  Indices are re-compacted, identifiers preserved.
    """
    if min_ratings_per_note < 1 or min_notes_per_rater < 1:
        raise ValueError("filter thresholds must be >= 1")
    keep = np.ones(obs.n_entries, dtype=bool)
    u, n = obs.u_idx, obs.n_idx
    while True:
        note_counts = np.bincount(n[keep], minlength=obs.n_notes)
        bad_note = note_counts < min_ratings_per_note
        changed = False
        if np.any(bad_note[n] & keep):
            keep &= ~bad_note[n]
            changed = True
        user_counts = np.bincount(u[keep], minlength=obs.n_users)
        bad_user = user_counts < min_notes_per_rater
        if np.any(bad_user[u] & keep):
            keep &= ~bad_user[u]
            changed = True
        if not changed:
            break

    kept_u = np.unique(u[keep])
    kept_n = np.unique(n[keep])
    user_ids = tuple(obs.user_ids[k] for k in kept_u)
    note_ids = tuple(obs.note_ids[k] for k in kept_n)
    u_remap = np.full(obs.n_users, -1, dtype=np.int64)
    n_remap = np.full(obs.n_notes, -1, dtype=np.int64)
    u_remap[kept_u] = np.arange(len(kept_u))
    n_remap[kept_n] = np.arange(len(kept_n))
    return ObservationSet(
        user_ids,
        note_ids,
        u_remap[u[keep]],
        n_remap[n[keep]],
        obs.ratings[keep].copy(),
    )


def subset_population(theta: LatentParams, user_sel: np.ndarray, note_sel: np.ndarray) -> LatentParams:
    """Restrict a parameter bundle to index subsets (warm-start plumbing)."""
    return LatentParams(theta.mu, theta.h[user_sel], theta.i[note_sel], theta.f[user_sel], theta.g[note_sel])
