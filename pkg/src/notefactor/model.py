"""Core domain types and the rank-1 rating model.

A rating by user ``u`` on note ``n`` is modelled as

    r_un = mu + h_u + i_n + f_u * g_n

where ``mu`` is a global intercept, ``h_u`` a per-rater intercept, ``i_n``
a per-note intercept (the aggregation target), and ``f_u``, ``g_n`` scalar
rater/note factors whose product captures systematic rater-note alignment.

This module holds the in-memory types (rating events, index-compacted
observation sets, latent parameter bundles), the prediction equation, the
canonical centered re-parameterisation used for identification, and the
report/status discretization rules.  Everything here is pure and
side-effect free; fitted values are produced elsewhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

# Public-display thresholds on the estimated note intercept.
HELPFUL_THRESHOLD = 0.4
NOT_HELPFUL_THRESHOLD = -0.05

# Tolerances defining the canonical centered representation.
CANONICAL_MEAN_ATOL = 1e-10
CANONICAL_NORM_ATOL = 1e-8

RATING_LEVELS = (0.0, 0.5, 1.0)


class NoteStatus(Enum):
    """Publication status assigned to a note from its estimated intercept."""

    HELPFUL = "helpful"
    NOT_HELPFUL = "not_helpful"
    NEEDS_MORE_RATINGS = "needs_more_ratings"


@dataclass(frozen=True)
class RatingEvent:
    """One observed rating: (rater, note, timestamp ms, value).

    Platform exports carry only the three discrete levels, mapped to
    1, 0.5 and 0.  Synthetic data may carry a continuous value in [0, 1]
    (the latent report before discretization), so the invariant enforced
    here is membership in [0, 1]; use :meth:`is_discrete` to check for
    the exact platform levels.
    """

    rater_id: str
    note_id: str
    created_at_ms: int
    rating: float

    def __post_init__(self):
        if not math.isfinite(self.rating) or not (0.0 <= self.rating <= 1.0):
            raise ValueError(f"rating must lie in [0, 1], got {self.rating!r}")
        if self.created_at_ms < 0:
            raise ValueError(f"created_at_ms must be >= 0, got {self.created_at_ms}")

    @property
    def is_discrete(self) -> bool:
        return self.rating in RATING_LEVELS


@dataclass(frozen=True)
class ObservationSet:
    """Index-compacted set of observed (user, note, rating) triples.

    ``user_ids[u]`` / ``note_ids[n]`` map the dense indices back to the
    opaque identifiers.  Invariants: at most one entry per (u, n) pair and
    every index below ``n_users`` / ``n_notes`` is referenced by at least
    one entry (construction compacts unused ids away).
    """

    user_ids: tuple[str, ...]
    note_ids: tuple[str, ...]
    u_idx: np.ndarray
    n_idx: np.ndarray
    ratings: np.ndarray

    def __post_init__(self):
        for name in ("u_idx", "n_idx", "ratings"):
            arr = getattr(self, name)
            arr.setflags(write=False)
        if not (len(self.u_idx) == len(self.n_idx) == len(self.ratings)):
            raise ValueError("entry arrays must have equal length")

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_notes(self) -> int:
        return len(self.note_ids)

    @property
    def n_entries(self) -> int:
        return len(self.ratings)

    @classmethod
    def from_entries(
        cls,
        entries: list[tuple[str, str, float]],
    ) -> "ObservationSet":
        """Build from (rater_id, note_id, rating) triples.

        Duplicate (rater, note) pairs are rejected here; use
        :meth:`from_events` for timestamped duplicate resolution.
        """
        seen = set()
        for rid, nid, _ in entries:
            if (rid, nid) in seen:
                raise ValueError(f"duplicate entry for pair ({rid!r}, {nid!r})")
            seen.add((rid, nid))
        user_ids = sorted({rid for rid, _, _ in entries})
        note_ids = sorted({nid for _, nid, _ in entries})
        umap = {rid: k for k, rid in enumerate(user_ids)}
        nmap = {nid: k for k, nid in enumerate(note_ids)}
        u = np.array([umap[rid] for rid, _, _ in entries], dtype=np.int64)
        n = np.array([nmap[nid] for _, nid, _ in entries], dtype=np.int64)
        r = np.array([float(x) for _, _, x in entries], dtype=np.float64)
        return cls(tuple(user_ids), tuple(note_ids), u, n, r)

    @classmethod
    def from_events(
        cls,
        events: list[RatingEvent],
        duplicate_policy: str = "latest",
    ) -> "ObservationSet":
        """Build from rating events, resolving duplicate (rater, note) pairs.

        ``duplicate_policy``: "latest" keeps the entry with the largest
        ``created_at_ms`` (matching most-recent-rating platform behaviour),
        "earliest" the smallest, "error" rejects duplicates.
        """
        if duplicate_policy not in ("latest", "earliest", "error"):
            raise ValueError(f"unknown duplicate_policy {duplicate_policy!r}")
        chosen: dict[tuple[str, str], RatingEvent] = {}
        for ev in events:
            key = (ev.rater_id, ev.note_id)
            prev = chosen.get(key)
            if prev is None:
                chosen[key] = ev
            elif duplicate_policy == "error":
                raise ValueError(f"duplicate rating for pair {key!r}")
            elif duplicate_policy == "latest" and ev.created_at_ms >= prev.created_at_ms:
                chosen[key] = ev
            elif duplicate_policy == "earliest" and ev.created_at_ms < prev.created_at_ms:
                chosen[key] = ev
        entries = [(k[0], k[1], ev.rating) for k, ev in chosen.items()]
        entries.sort(key=lambda t: (t[0], t[1]))
        return cls.from_entries(entries)

    def dense_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (matrix, mask) with NaN-free values where mask is True.

        Intended for small test instances; memory is O(U * N).
        """
        mat = np.zeros((self.n_users, self.n_notes))
        mask = np.zeros((self.n_users, self.n_notes), dtype=bool)
        mat[self.u_idx, self.n_idx] = self.ratings
        mask[self.u_idx, self.n_idx] = True
        return mat, mask


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class LatentParams:
    """Bundle (mu, h, i, f, g) for a population of U users and N notes.

    Arrays are copied on construction and frozen; operations return new
    instances, so values are safe to share across threads.
    """

    mu: float
    h: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "h", _readonly(self.h))
        object.__setattr__(self, "i", _readonly(self.i))
        object.__setattr__(self, "f", _readonly(self.f))
        object.__setattr__(self, "g", _readonly(self.g))
        if self.h.shape != self.f.shape or self.i.shape != self.g.shape:
            raise ValueError("user-side and note-side vectors must pair up in length")
        values = np.concatenate([[self.mu], self.h, self.i, self.f, self.g])
        if not np.all(np.isfinite(values)):
            raise ValueError("latent parameters must be finite")

    @property
    def n_users(self) -> int:
        return len(self.h)

    @property
    def n_notes(self) -> int:
        return len(self.i)

    @classmethod
    def zeros(cls, n_users: int, n_notes: int, mu: float = 0.0) -> "LatentParams":
        return cls(mu, np.zeros(n_users), np.zeros(n_notes), np.zeros(n_users), np.zeros(n_notes))

    def reconstruct(self) -> np.ndarray:
        """Dense U x N matrix of model values (test-scale sizes only)."""
        return (
            self.mu
            + self.h[:, None]
            + self.i[None, :]
            + np.outer(self.f, self.g)
        )

    def is_canonical(self) -> bool:
        """True when means vanish and ||f||^2 / U = 1 (or f is identically 0)."""
        means_ok = (
            abs(self.h.mean()) <= CANONICAL_MEAN_ATOL
            and abs(self.i.mean()) <= CANONICAL_MEAN_ATOL
            and abs(self.f.mean()) <= CANONICAL_MEAN_ATOL
            and abs(self.g.mean()) <= CANONICAL_MEAN_ATOL
        )
        if not means_ok:
            return False
        fsq = float(self.f @ self.f) / max(len(self.f), 1)
        return fsq == 0.0 or abs(fsq - 1.0) <= CANONICAL_NORM_ATOL


def predict(theta: LatentParams, u: int, n: int) -> float:
    """Model value mu + h_u + i_n + f_u * g_n for one (user, note) pair."""
    if not (0 <= u < theta.n_users):
        raise IndexError(f"user index {u} out of range [0, {theta.n_users})")
    if not (0 <= n < theta.n_notes):
        raise IndexError(f"note index {n} out of range [0, {theta.n_notes})")
    return float(theta.mu + theta.h[u] + theta.i[n] + theta.f[u] * theta.g[n])


def predict_entries(theta: LatentParams, u_idx: np.ndarray, n_idx: np.ndarray) -> np.ndarray:
    """Vectorised :func:`predict` over parallel index arrays."""
    if len(u_idx) and (u_idx.min() < 0 or u_idx.max() >= theta.n_users):
        raise IndexError("user index out of range")
    if len(n_idx) and (n_idx.min() < 0 or n_idx.max() >= theta.n_notes):
        raise IndexError("note index out of range")
    return theta.mu + theta.h[u_idx] + theta.i[n_idx] + theta.f[u_idx] * theta.g[n_idx]


def canonical_center(theta: LatentParams) -> LatentParams:
    """Re-express theta in the canonical centered form.

    The returned parameters reproduce the same matrix (entrywise within
    1e-10 for bounded inputs) with mean-zero h, i, f, g, unit mean-square
    rater factor, and sign chosen so that <f_out, f_in> >= 0.  When the
    centered rater factor vanishes the rank-one term is dropped entirely
    (zero factors, no normalisation).
    """
    h_bar = float(theta.h.mean()) if theta.n_users else 0.0
    i_bar = float(theta.i.mean()) if theta.n_notes else 0.0
    f_bar = float(theta.f.mean()) if theta.n_users else 0.0
    g_bar = float(theta.g.mean()) if theta.n_notes else 0.0

    mu = theta.mu + h_bar + i_bar + f_bar * g_bar
    f = theta.f - f_bar
    g = theta.g - g_bar
    h = theta.h - h_bar + g_bar * f
    i = theta.i - i_bar + f_bar * g

    fsq = float(f @ f)
    if fsq == 0.0:
        return LatentParams(mu, h, i, np.zeros_like(f), np.zeros_like(g))
    scale = math.sqrt(fsq / theta.n_users)
    f = f / scale
    g = g * scale
    if float(f @ theta.f) < 0.0:
        f = -f
        g = -g
    return LatentParams(mu, h, i, f, g)


def decenter_note_intercept(i_hat: np.ndarray, g_hat: np.ndarray, c: float) -> np.ndarray:
    """Undo the factor-mean component absorbed by centering: i0 = i + c * g.

    ``c`` is the known mean rater factor.  Valid when the estimated factor
    is oriented and scaled so that c * g_hat matches the absorbed term
    (minority-positive sign convention, unit-variance population factor).
    """
    i_hat = np.asarray(i_hat, dtype=np.float64)
    g_hat = np.asarray(g_hat, dtype=np.float64)
    if i_hat.shape != g_hat.shape:
        raise ValueError(
            f"length mismatch: i_hat has shape {i_hat.shape}, g_hat {g_hat.shape}"
        )
    return i_hat + c * g_hat


def discretize_report(a: float) -> float:
    """Map a latent report to the platform levels: a<0 -> 0, a=0 -> 0.5, a>0 -> 1."""
    if not math.isfinite(a):
        raise ValueError(f"latent report must be finite, got {a!r}")
    if a < 0.0:
        return 0.0
    if a == 0.0:
        return 0.5
    return 1.0


def discretize_reports(a: np.ndarray) -> np.ndarray:
    """Vectorised :func:`discretize_report`."""
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("latent reports must be finite")
    return np.where(a < 0.0, 0.0, np.where(a == 0.0, 0.5, 1.0))


def classify_note(i_hat_n: float) -> NoteStatus:
    """Status from the estimated note intercept: >=0.4 helpful, <-0.05 not helpful."""
    if not math.isfinite(i_hat_n):
        raise ValueError(f"note intercept must be finite, got {i_hat_n!r}")
    if i_hat_n >= HELPFUL_THRESHOLD:
        return NoteStatus.HELPFUL
    if i_hat_n < NOT_HELPFUL_THRESHOLD:
        return NoteStatus.NOT_HELPFUL
    return NoteStatus.NEEDS_MORE_RATINGS


def classify_all(theta: LatentParams) -> list[NoteStatus]:
    """Elementwise :func:`classify_note` over the note intercepts."""
    return [classify_note(float(x)) for x in theta.i]
