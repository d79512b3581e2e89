"""Generative simulator of strategic conformity in crowd ratings.

Users observe a private latent signal

    r*_un = mu + h_u + i_n + f_u g_n + eps_un

and a noisy forecast of the platform's eventual consensus on the note,
m~_un = m_n + eps^m_un.  The submitted report trades the two off through a
controversy-dependent conformity weight rho(c_n):

    a*_un = rho(c_n) r*_un + (1 - rho(c_n)) m~_un

With rho = 1 reporting is truthful.  Ground truth (latents, controversy,
conformity weights, consensus targets, noise scales) is retained so the
theory suite can compare fitted estimates against closed-form limits.

All sampling is driven by named substreams of a single seed, so datasets
are bitwise reproducible; population and observation draws are separable
so Monte Carlo studies can redraw noise against a fixed population.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .model import LatentParams, ObservationSet, RatingEvent, discretize_reports

TRUNCNORM_CLIP = 6.0  # bounded sub-Gaussian family: truncation at +/- 6 sd


@dataclass(frozen=True)
class BoundedDist:
    """Bounded scalar distribution: uniform, truncated normal, or point mass."""

    kind: str  # "uniform" | "truncnormal" | "point"
    mean: float = 0.0
    spread: float = 0.0  # half-width (uniform) or sd (truncnormal)

    def __post_init__(self):
        if self.kind not in ("uniform", "truncnormal", "point"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.spread < 0.0 or not math.isfinite(self.spread) or not math.isfinite(self.mean):
            raise ValueError("distribution parameters must be finite, spread >= 0")

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "point" or self.spread == 0.0:
            return np.full(size, self.mean)
        if self.kind == "uniform":
            return rng.uniform(self.mean - self.spread, self.mean + self.spread, size=size)
        return stats.truncnorm.rvs(
            -TRUNCNORM_CLIP, TRUNCNORM_CLIP, loc=self.mean, scale=self.spread,
            size=size, random_state=rng,
        )

    def cdf(self, x: float) -> float:
        """CDF at x; used for minority-share predictions."""
        if self.kind == "point" or self.spread == 0.0:
            return float(x >= self.mean)
        if self.kind == "uniform":
            lo, hi = self.mean - self.spread, self.mean + self.spread
            return float(np.clip((x - lo) / (hi - lo), 0.0, 1.0))
        return float(
            stats.truncnorm.cdf(x, -TRUNCNORM_CLIP, TRUNCNORM_CLIP, loc=self.mean, scale=self.spread)
        )


@dataclass(frozen=True)
class NoiseSpec:
    """Per-user rating-noise standard deviations.

    ``constant``: every user gets ``sigma``.  ``two_group``: fraction
    ``frac_high`` of users get ``sigma_high``, the rest ``sigma_low``
    (deterministic split by index, then shuffled by seed).
    """

    kind: str = "constant"  # "constant" | "two_group" | "per_user"
    sigma: float = 0.1
    sigma_low: float = 0.05
    sigma_high: float = 0.5
    frac_high: float = 0.5
    values: tuple[float, ...] | None = None

    def build(self, n_users: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "constant":
            return np.full(n_users, self.sigma)
        if self.kind == "two_group":
            n_high = int(round(self.frac_high * n_users))
            out = np.full(n_users, self.sigma_low)
            out[:n_high] = self.sigma_high
            rng.shuffle(out)
            return out
        if self.kind == "per_user":
            if self.values is None or len(self.values) != n_users:
                raise ValueError("per_user noise requires a values vector of length U")
            return np.array(self.values, dtype=np.float64)
        raise ValueError(f"unknown noise kind {self.kind!r}")


@dataclass(frozen=True)
class RhoSpec:
    """Conformity weight as a monotone non-increasing map of controversy.

    ``linear``: rho(c) = 1 - kappa * c with kappa in [0, 1].
    ``step``:   rho(c) = 1 for c < threshold, ``low`` otherwise.
    """

    kind: str = "linear"
    kappa: float = 0.0
    threshold: float = 0.5
    low: float = 0.5

    def __post_init__(self):
        if self.kind not in ("linear", "step"):
            raise ValueError(f"unknown rho kind {self.kind!r}")
        if self.kind == "linear" and not (0.0 <= self.kappa <= 1.0):
            raise ValueError("kappa must lie in [0, 1]")
        if self.kind == "step" and not (0.0 <= self.low <= 1.0):
            raise ValueError("step level must lie in [0, 1]")

    def __call__(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=np.float64)
        if self.kind == "linear":
            return 1.0 - self.kappa * c
        return np.where(c < self.threshold, 1.0, self.low)


@dataclass(frozen=True)
class SimConfig:
    """Full specification of one synthetic population and sampling scheme."""

    n_users: int = 200
    n_notes: int = 200
    p_observe: float = 1.0
    mu: float = 0.5
    mu_f: float = 0.5  # known positive mean rater factor, identifies the majority
    dist_h: BoundedDist = field(default_factory=lambda: BoundedDist("truncnormal", 0.0, 0.3))
    dist_i: BoundedDist = field(default_factory=lambda: BoundedDist("truncnormal", 0.0, 0.3))
    dist_f: BoundedDist = field(default_factory=lambda: BoundedDist("truncnormal", 0.5, 1.0))
    dist_g: BoundedDist = field(default_factory=lambda: BoundedDist("truncnormal", 0.0, 0.35))
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    controversy: BoundedDist = field(default_factory=lambda: BoundedDist("uniform", 0.5, 0.5))
    rho: RhoSpec = field(default_factory=RhoSpec)
    consensus: BoundedDist = field(default_factory=lambda: BoundedDist("uniform", 0.0, 0.5))
    sigma_m: float = 0.0  # forecast-noise scale
    sigma_m_proportional: bool = False  # if set, per-note scale is sigma_m * c_n
    noise_after_mixing: bool = False  # add rating noise to the mixed report instead
    discretize: bool = False
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.p_observe <= 1.0):
            raise ValueError("p_observe must lie in (0, 1]")
        if self.mu_f <= 0.0:
            raise ValueError("mu_f must be > 0 (identifies the majority orientation)")
        if self.n_users < 1 or self.n_notes < 1:
            raise ValueError("population sizes must be positive")
        if self.sigma_m < 0.0:
            raise ValueError("sigma_m must be >= 0")
        if self.dist_f.mean != self.mu_f:
            raise ValueError("dist_f mean must equal mu_f")


@dataclass(frozen=True)
class SimTruth:
    """Ground-truth population: latents plus conformity structure."""

    config: SimConfig
    theta0: LatentParams  # uncentered truth, E[f] = mu_f
    c: np.ndarray  # per-note controversy in [0, 1]
    rho: np.ndarray  # conformity weight rho(c_n)
    m: np.ndarray  # anticipated consensus target per note
    delta: np.ndarray  # m_n - (mu + i_n)
    sigma_u: np.ndarray  # per-user rating-noise sd
    sigma_m_n: np.ndarray  # per-note forecast-noise sd

    def __post_init__(self):
        for name in ("c", "rho", "m", "delta", "sigma_u", "sigma_m_n"):
            getattr(self, name).setflags(write=False)


def _population_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    pop_ss, obs_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(pop_ss), np.random.default_rng(obs_ss)


def sample_population(cfg: SimConfig) -> SimTruth:
    """Draw one i.i.d. population per the configured bounded distributions."""
    rng, _ = _population_streams(cfg.seed)
    U, N = cfg.n_users, cfg.n_notes
    h = cfg.dist_h.sample(U, rng)
    i = cfg.dist_i.sample(N, rng)
    f = cfg.dist_f.sample(U, rng)
    g = cfg.dist_g.sample(N, rng)
    c = np.clip(cfg.controversy.sample(N, rng), 0.0, 1.0)
    m = cfg.consensus.sample(N, rng)
    sigma_u = cfg.noise.build(U, rng)
    rho = cfg.rho(c)
    theta0 = LatentParams(cfg.mu, h, i, f, g)
    delta = m - (cfg.mu + i)
    sigma_m_n = cfg.sigma_m * c if cfg.sigma_m_proportional else np.full(N, cfg.sigma_m)
    return SimTruth(cfg, theta0, c, rho, m, delta, sigma_u, sigma_m_n)


def latent_signal(truth: SimTruth, u: int, n: int, rng: np.random.Generator) -> float:
    """One draw of the private signal r*_un = s_un + eps_un."""
    theta = truth.theta0
    s = theta.mu + theta.h[u] + theta.i[n] + theta.f[u] * theta.g[n]
    return float(s + _truncnormal_noise(truth.sigma_u[u], 1, rng)[0])


def anticipated_consensus(truth: SimTruth, u: int, n: int, rng: np.random.Generator) -> float:
    """One draw of the perceived consensus m~_un = m_n + eps^m_un."""
    return float(truth.m[n] + _truncnormal_noise(truth.sigma_m_n[n], 1, rng)[0])


def report(truth: SimTruth, u: int, n: int, rng: np.random.Generator) -> float:
    """One draw of the submitted report a*_un (continuous latent index)."""
    rho = truth.rho[n]
    if truth.config.noise_after_mixing:
        theta = truth.theta0
        s = theta.mu + theta.h[u] + theta.i[n] + theta.f[u] * theta.g[n]
        mix = rho * s + (1.0 - rho) * anticipated_consensus(truth, u, n, rng)
        return float(mix + _truncnormal_noise(truth.sigma_u[u], 1, rng)[0])
    r_star = latent_signal(truth, u, n, rng)
    m_tilde = anticipated_consensus(truth, u, n, rng)
    return float(rho * r_star + (1.0 - rho) * m_tilde)


def _truncnormal_noise(sigma, size, rng: np.random.Generator) -> np.ndarray:
    """Mean-zero truncated-normal noise, sd ~ sigma, clipped at +/- 6 sigma."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.all(sigma == 0.0):
        return np.zeros(size)
    draws = stats.truncnorm.rvs(-TRUNCNORM_CLIP, TRUNCNORM_CLIP, size=size, random_state=rng)
    return sigma * draws


def sample_observations(truth: SimTruth, seed: int | None = None) -> ObservationSet:
    """Draw the MCAR mask and one report per included (u, n) cell.

    With ``seed=None`` the observation substream derived from the
    config seed is used (this is what :func:`generate_dataset` does).
    """
    cfg = truth.config
    if seed is None:
        _, rng = _population_streams(cfg.seed)
    else:
        rng = np.random.default_rng(np.random.SeedSequence(seed))
    U, N = cfg.n_users, cfg.n_notes

    if cfg.p_observe >= 1.0:
        u_idx = np.repeat(np.arange(U, dtype=np.int64), N)
        n_idx = np.tile(np.arange(N, dtype=np.int64), U)
    else:
        mask = rng.random((U, N)) < cfg.p_observe
        u_idx, n_idx = np.nonzero(mask)
        u_idx = u_idx.astype(np.int64)
        n_idx = n_idx.astype(np.int64)
    if len(u_idx) == 0:
        warnings.warn("empty observation set drawn (p_observe too small)")

    reports = _draw_reports(truth, u_idx, n_idx, rng)
    if cfg.discretize:
        reports = discretize_reports(reports)

    user_ids = tuple(f"u{k:06d}" for k in range(U))
    note_ids = tuple(f"n{k:06d}" for k in range(N))
    # compacting: indices with no sampled entries are dropped
    used_u = np.unique(u_idx)
    used_n = np.unique(n_idx)
    if len(used_u) < U or len(used_n) < N:
        u_remap = np.full(U, -1, dtype=np.int64)
        n_remap = np.full(N, -1, dtype=np.int64)
        u_remap[used_u] = np.arange(len(used_u))
        n_remap[used_n] = np.arange(len(used_n))
        user_ids = tuple(user_ids[k] for k in used_u)
        note_ids = tuple(note_ids[k] for k in used_n)
        u_idx = u_remap[u_idx]
        n_idx = n_remap[n_idx]
    return ObservationSet(user_ids, note_ids, u_idx, n_idx, reports)


def _draw_reports(truth, u_idx, n_idx, rng) -> np.ndarray:
    """Vectorised report draws for given cells (same model as :func:`report`)."""
    cfg = truth.config
    theta = truth.theta0
    s = theta.mu + theta.h[u_idx] + theta.i[n_idx] + theta.f[u_idx] * theta.g[n_idx]
    rho = truth.rho[n_idx]
    eps = _truncnormal_noise(truth.sigma_u[u_idx], len(u_idx), rng)
    eps_m = _truncnormal_noise(truth.sigma_m_n[n_idx], len(n_idx), rng)
    m_tilde = truth.m[n_idx] + eps_m
    if cfg.noise_after_mixing:
        return rho * s + (1.0 - rho) * m_tilde + eps
    return rho * (s + eps) + (1.0 - rho) * m_tilde


def generate_dataset(cfg: SimConfig) -> tuple[ObservationSet, SimTruth]:
    """Sample a population and one observed dataset from it."""
    truth = sample_population(cfg)
    return sample_observations(truth), truth


@dataclass(frozen=True)
class StreamConfig:
    """Weekly arrival process layered on top of a :class:`SimConfig` population.

    Notes arrive in weekly cohorts and stay ratable for ``active_weeks``;
    each user rates each active, not-yet-rated note independently with
    probability ``rating_prob``.  ``cfg.n_notes`` must equal
    ``n_weeks * notes_per_week``.
    """

    n_weeks: int = 40
    notes_per_week: int = 25
    rating_prob: float = 0.5
    active_weeks: int = 2
    start_ms: int = 1672617600000  # 2023-01-02 Mon 00:00 UTC

    WEEK_MS = 7 * 24 * 3600 * 1000


def generate_weekly_events(cfg: SimConfig, stream: StreamConfig) -> tuple[list[RatingEvent], SimTruth]:
    """Simulate a weekly rating stream with ground truth retained."""
    if cfg.n_notes != stream.n_weeks * stream.notes_per_week:
        raise ValueError("cfg.n_notes must equal n_weeks * notes_per_week")
    truth = sample_population(cfg)
    _, rng = _population_streams(cfg.seed)
    events: list[RatingEvent] = []
    rated: set[tuple[int, int]] = set()
    for week in range(stream.n_weeks):
        first_cohort = max(0, week - stream.active_weeks + 1)
        active = np.arange(
            first_cohort * stream.notes_per_week, (week + 1) * stream.notes_per_week
        )
        pick = rng.random((cfg.n_users, len(active))) < stream.rating_prob
        u_all, a_all = np.nonzero(pick)
        n_all = active[a_all]
        fresh = np.array(
            [(u, n) not in rated for u, n in zip(u_all, n_all)], dtype=bool
        )
        u_idx, n_idx = u_all[fresh].astype(np.int64), n_all[fresh].astype(np.int64)
        rated.update(zip(u_idx.tolist(), n_idx.tolist()))
        values = _draw_reports(truth, u_idx, n_idx, rng)
        if cfg.discretize:
            values = discretize_reports(values)
        offsets = rng.integers(0, StreamConfig.WEEK_MS, size=len(u_idx))
        base = stream.start_ms + week * StreamConfig.WEEK_MS
        for u, n, v, off in zip(u_idx, n_idx, values, offsets):
            events.append(
                RatingEvent(
                    rater_id=f"u{u:06d}",
                    note_id=f"n{n:06d}",
                    created_at_ms=int(base + off),
                    rating=float(np.clip(v, 0.0, 1.0)),
                )
            )
    events.sort(key=lambda e: (e.created_at_ms, e.rater_id, e.note_id))
    return events, truth
