"""Rolling weekly fits and out-of-sample prediction metrics.

Ingests ratings in the public export schema, buckets them into calendar
weeks, refits the model each week on cumulative filtered data (optionally
with the two-stage reweighting), and scores in-sample and one-week-ahead
errors.  One-week-ahead pairs are restricted to raters and notes that the
week-t fit actually carries parameters for, and all errors are computed
on raw (pre-discretization) predictions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .factorization import (
    DEFAULT_MIN_NOTES_PER_RATER,
    DEFAULT_MIN_RATINGS_PER_NOTE,
    FitConfig,
    filter_observations,
    fit,
    fix_factor_signs,
)
from .model import LatentParams, ObservationSet, RatingEvent
from .twostage import two_stage_fit

HELPFULNESS_LEVELS = {
    "HELPFUL": 1.0,
    "SOMEWHAT_HELPFUL": 0.5,
    "NOT_HELPFUL": 0.0,
}
REQUIRED_COLUMNS = ("noteId", "raterParticipantId", "createdAtMillis", "helpfulnessLevel")

MS_PER_DAY = 24 * 3600 * 1000
MS_PER_WEEK = 7 * MS_PER_DAY

BASELINE = "baseline"
TWOSTAGE = "twostage"


@dataclass(frozen=True)
class IngestResult:
    events: list[RatingEvent]
    skipped_rows: int


def ingest_ratings_tsv(path, allow_numeric: bool = True) -> IngestResult:
    """Read a ratings TSV in the public export schema.

    Requires a header containing at least noteId, raterParticipantId,
    createdAtMillis and helpfulnessLevel; extra columns are ignored.
    Level strings map HELPFUL -> 1, SOMEWHAT_HELPFUL -> 0.5,
    NOT_HELPFUL -> 0.  With ``allow_numeric`` a numeric literal in [0, 1]
    is also accepted (continuous synthetic reports travel through the
    same path as real data); rows with any other level are counted and
    skipped.  Returned events are sorted by timestamp.
    """
    events: list[RatingEvent] = []
    skipped = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        header = reader.fieldnames or []
        for col in REQUIRED_COLUMNS:
            if col not in header:
                raise ValueError(f"missing required column {col!r}")
        for line_no, row in enumerate(reader, start=2):
            raw_ts = row["createdAtMillis"]
            try:
                ts = int(raw_ts)
            except (TypeError, ValueError):
                raise ValueError(f"unparseable createdAtMillis {raw_ts!r} on line {line_no}")
            level = (row["helpfulnessLevel"] or "").strip()
            if level in HELPFULNESS_LEVELS:
                value = HELPFULNESS_LEVELS[level]
            elif allow_numeric:
                try:
                    value = float(level)
                except ValueError:
                    skipped += 1
                    continue
                if not (0.0 <= value <= 1.0) or not math.isfinite(value):
                    skipped += 1
                    continue
            else:
                skipped += 1
                continue
            events.append(
                RatingEvent(
                    rater_id=row["raterParticipantId"],
                    note_id=row["noteId"],
                    created_at_ms=ts,
                    rating=value,
                )
            )
    events.sort(key=lambda e: (e.created_at_ms, e.rater_id, e.note_id))
    return IngestResult(events, skipped)


def _week_start_ms(ts_ms: int, anchor_weekday: int) -> int:
    """Start of the calendar week containing ts (half-open weekly intervals).

    ``anchor_weekday``: 0 = Monday ... 6 = Sunday, boundary 00:00 UTC.
    """
    day = ts_ms // MS_PER_DAY
    weekday = (day + 3) % 7  # 1970-01-01 is a Thursday
    start_day = day - ((weekday - anchor_weekday) % 7)
    return start_day * MS_PER_DAY


@dataclass(frozen=True)
class WeeklyStream:
    """Events bucketed into consecutive calendar weeks.

    ``week_starts`` are strictly increasing; cumulative sets are nested by
    construction.  Empty interior weeks are kept so week arithmetic stays
    calendar-faithful.
    """

    week_starts: tuple[int, ...]
    new_events: tuple[tuple[RatingEvent, ...], ...]

    @property
    def n_weeks(self) -> int:
        return len(self.week_starts)

    def cumulative_events(self, t: int) -> list[RatingEvent]:
        out: list[RatingEvent] = []
        for k in range(t + 1):
            out.extend(self.new_events[k])
        return out

    def week_label(self, t: int) -> str:
        day = self.week_starts[t] // MS_PER_DAY
        import datetime

        d = datetime.date(1970, 1, 1) + datetime.timedelta(days=int(day))
        return d.isoformat()


def weekly_split(events: list[RatingEvent], week_anchor: int = 0) -> WeeklyStream:
    """Bucket time-sorted events by calendar week (default Monday 00:00 UTC)."""
    if not (0 <= week_anchor <= 6):
        raise ValueError("week_anchor must be a weekday index 0..6")
    if not events:
        return WeeklyStream((), ())
    ts = [e.created_at_ms for e in events]
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise ValueError("events must be sorted by created_at_ms")
    first = _week_start_ms(events[0].created_at_ms, week_anchor)
    last = _week_start_ms(events[-1].created_at_ms, week_anchor)
    starts = list(range(first, last + 1, MS_PER_WEEK))
    buckets: list[list[RatingEvent]] = [[] for _ in starts]
    for e in events:
        idx = (_week_start_ms(e.created_at_ms, week_anchor) - first) // MS_PER_WEEK
        buckets[idx].append(e)
    return WeeklyStream(tuple(starts), tuple(tuple(b) for b in buckets))


@dataclass(frozen=True)
class WeekMetrics:
    week: str
    method: str
    n_in_sample: int
    in_sample_mse: float | None
    n_oos: int
    oos_mse: float | None
    oos_mar: float | None
    oos_medar: float | None


@dataclass
class EvalReport:
    rows: list[WeekMetrics] = field(default_factory=list)

    def methods(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.method not in seen:
                seen.append(r.method)
        return seen

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.__dict__ for r in self.rows])

    def aggregate(self, method: str) -> dict:
        """Mean of each metric over scored weeks with a normal 95% CI."""
        out: dict = {"method": method}
        frame = self.to_frame()
        frame = frame[frame["method"] == method]
        for col in ("in_sample_mse", "oos_mse", "oos_mar", "oos_medar"):
            vals = frame[col].dropna().to_numpy(dtype=float)
            if len(vals) == 0:
                out[col] = None
                out[col + "_ci"] = None
                continue
            mean = float(vals.mean())
            half = 1.96 * float(vals.std(ddof=1)) / math.sqrt(len(vals)) if len(vals) > 1 else 0.0
            out[col] = mean
            out[col + "_ci"] = (mean - half, mean + half)
        return out


def _params_as_maps(theta: LatentParams, obs: ObservationSet) -> dict:
    return {
        "mu": theta.mu,
        "users": {uid: (theta.h[k], theta.f[k]) for k, uid in enumerate(obs.user_ids)},
        "notes": {nid: (theta.i[k], theta.g[k]) for k, nid in enumerate(obs.note_ids)},
    }


def _warm_start_from(track: dict | None, obs: ObservationSet) -> LatentParams | None:
    """Align a previous week's parameters to this week's index space."""
    if track is None:
        return None
    h = np.zeros(obs.n_users)
    f = np.zeros(obs.n_users)
    i = np.zeros(obs.n_notes)
    g = np.zeros(obs.n_notes)
    for k, uid in enumerate(obs.user_ids):
        if uid in track["users"]:
            h[k], f[k] = track["users"][uid]
    for k, nid in enumerate(obs.note_ids):
        if nid in track["notes"]:
            i[k], g[k] = track["notes"][nid]
    return LatentParams(track["mu"], h, i, f, g)


def _score(theta: LatentParams, obs_index: dict, events) -> tuple[int, float, float, float] | None:
    """(count, mse, mar, medar) over events whose pair is scoreable, else None."""
    errs = []
    umap, nmap = obs_index["users"], obs_index["notes"]
    for e in events:
        u = umap.get(e.rater_id)
        n = nmap.get(e.note_id)
        if u is None or n is None:
            continue
        pred = theta.mu + theta.h[u] + theta.i[n] + theta.f[u] * theta.g[n]
        errs.append(e.rating - pred)
    if not errs:
        return None
    errs_arr = np.asarray(errs)
    return (
        len(errs),
        float(np.mean(errs_arr**2)),
        float(np.mean(np.abs(errs_arr))),
        float(np.median(np.abs(errs_arr))),
    )


def rolling_evaluate(
    stream: WeeklyStream,
    cfg: FitConfig | None = None,
    methods: tuple[str, ...] = (BASELINE, TWOSTAGE),
    warm_weeks: int = 4,
    min_ratings_per_note: int = DEFAULT_MIN_RATINGS_PER_NOTE,
    min_notes_per_rater: int = DEFAULT_MIN_NOTES_PER_RATER,
    eligibility: str = "fitted",
) -> EvalReport:
    """Weekly cumulative fits with in-sample and one-week-ahead scoring.

    For each week t >= warm_weeks the cumulative data are filtered, each
    method is refit warm-started from its own previous week (sign-fixed),
    week-t ratings are scored in sample and week-(t+1) ratings out of
    sample.  ``eligibility`` "fitted" scores OOS pairs whose rater and
    note carry week-t parameters; "active" additionally requires both to
    appear among week-t's new ratings.  Weeks with nothing scoreable
    record nulls.
    """
    cfg = cfg or FitConfig()
    if eligibility not in ("fitted", "active"):
        raise ValueError(f"unknown eligibility mode {eligibility!r}")
    for m in methods:
        if m not in (BASELINE, TWOSTAGE):
            raise ValueError(f"unknown method {m!r}")
    if stream.n_weeks <= warm_weeks:
        raise ValueError(
            f"stream has {stream.n_weeks} weeks; need more than warm_weeks={warm_weeks}"
        )
    report = EvalReport()
    tracks: dict[str, dict | None] = {m: None for m in methods}
    for t in range(warm_weeks, stream.n_weeks - 1):
        cumulative = stream.cumulative_events(t)
        obs_all = ObservationSet.from_events(cumulative)
        obs = filter_observations(obs_all, min_ratings_per_note, min_notes_per_rater)
        label = stream.week_label(t)
        if obs.n_entries == 0:
            for m in methods:
                report.rows.append(WeekMetrics(label, m, 0, None, 0, None, None, None))
            continue
        obs_index = {
            "users": {uid: k for k, uid in enumerate(obs.user_ids)},
            "notes": {nid: k for k, nid in enumerate(obs.note_ids)},
        }
        week_events = stream.new_events[t]
        next_events = stream.new_events[t + 1]
        if eligibility == "active":
            active_users = {e.rater_id for e in week_events}
            active_notes = {e.note_id for e in week_events}
            next_events = tuple(
                e for e in next_events
                if e.rater_id in active_users and e.note_id in active_notes
            )
        for m in methods:
            week_cfg = replace(cfg, warm_start=_warm_start_from(tracks[m], obs))
            if m == BASELINE:
                theta = fit(obs, week_cfg).params
            else:
                theta = two_stage_fit(obs, week_cfg).theta_ts
            theta = fix_factor_signs(theta)
            tracks[m] = _params_as_maps(theta, obs)
            ins = _score(theta, obs_index, week_events)
            oos = _score(theta, obs_index, next_events)
            report.rows.append(
                WeekMetrics(
                    week=label,
                    method=m,
                    n_in_sample=ins[0] if ins else 0,
                    in_sample_mse=ins[1] if ins else None,
                    n_oos=oos[0] if oos else 0,
                    oos_mse=oos[1] if oos else None,
                    oos_mar=oos[2] if oos else None,
                    oos_medar=oos[3] if oos else None,
                )
            )
    return report


def compare_methods(report: EvalReport) -> pd.DataFrame:
    """Per-week and average percent improvement of the two-stage method.

    Improvement is (baseline - twostage) / baseline per metric; weeks
    where the baseline metric is zero or missing yield NaN (rendered as
    n/a downstream).
    """
    frame = report.to_frame()
    if not {BASELINE, TWOSTAGE} <= set(frame["method"]):
        raise ValueError("report must cover both the baseline and twostage methods")
    base = frame[frame["method"] == BASELINE].set_index("week")
    ts = frame[frame["method"] == TWOSTAGE].set_index("week")
    rows = []
    for week in base.index:
        if week not in ts.index:
            continue
        row = {"week": week}
        for col in ("oos_mse", "oos_mar", "oos_medar", "in_sample_mse"):
            b, w = base.loc[week, col], ts.loc[week, col]
            if b is None or w is None or pd.isna(b) or pd.isna(w) or b == 0.0:
                row[f"improvement_{col}"] = np.nan
            else:
                row[f"improvement_{col}"] = (b - w) / b
        rows.append(row)
    out = pd.DataFrame(rows)
    if len(out):
        means = {"week": "average"}
        for col in out.columns:
            if col != "week":
                means[col] = out[col].mean(skipna=True)
        out = pd.concat([out, pd.DataFrame([means])], ignore_index=True)
    return out
