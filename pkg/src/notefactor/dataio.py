"""File formats: ratings TSV, truth sidecar, parameter snapshots, manifests.

All writers are deterministic (stable ordering, shortest round-trip float
repr, no timestamps), so reruns with identical inputs produce byte
identical artifacts; run manifests record sha256 hashes of every output.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math

import numpy as np

from .model import LatentParams, ObservationSet, RatingEvent
from .simulation import SimTruth

PARAMS_COLUMNS = ("kind", "id", "intercept", "factor")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return ""
        return repr(v)
    return str(value)


def write_tsv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def rating_value_to_level(value: float) -> str:
    """Render a rating for the TSV: level name when discrete, literal otherwise."""
    if value == 1.0:
        return "HELPFUL"
    if value == 0.5:
        return "SOMEWHAT_HELPFUL"
    if value == 0.0:
        return "NOT_HELPFUL"
    return repr(float(value))


def write_ratings_tsv(path, events: list[RatingEvent]) -> None:
    rows = [
        [e.note_id, e.rater_id, e.created_at_ms, rating_value_to_level(e.rating)]
        for e in events
    ]
    write_tsv(path, ["noteId", "raterParticipantId", "createdAtMillis", "helpfulnessLevel"], rows)


def events_from_observations(obs: ObservationSet, base_ms: int = 0) -> list[RatingEvent]:
    """Wrap a batch observation set as events with sequential timestamps."""
    events = []
    for k in range(obs.n_entries):
        events.append(
            RatingEvent(
                rater_id=obs.user_ids[obs.u_idx[k]],
                note_id=obs.note_ids[obs.n_idx[k]],
                created_at_ms=base_ms + k,
                rating=float(np.clip(obs.ratings[k], 0.0, 1.0)),
            )
        )
    return events


def write_truth_json(path, truth: SimTruth) -> None:
    """Truth sidecar: columnar JSON with per-field arrays and ids."""
    theta = truth.theta0
    payload = {
        "mu": theta.mu,
        "mu_f": truth.config.mu_f,
        "seed": truth.config.seed,
        "user_ids": [f"u{k:06d}" for k in range(theta.n_users)],
        "note_ids": [f"n{k:06d}" for k in range(theta.n_notes)],
        "h": theta.h.tolist(),
        "f": theta.f.tolist(),
        "sigma_u": truth.sigma_u.tolist(),
        "i": theta.i.tolist(),
        "g": theta.g.tolist(),
        "controversy": truth.c.tolist(),
        "rho": truth.rho.tolist(),
        "consensus": truth.m.tolist(),
        "delta": truth.delta.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def write_params_tsv(path, theta: LatentParams, user_ids, note_ids) -> None:
    """Parameter snapshot: one global row, one row per user, one per note."""
    if len(user_ids) != theta.n_users or len(note_ids) != theta.n_notes:
        raise ValueError("id lists must match parameter dimensions")
    rows: list[list] = [["global", "", theta.mu, None]]
    for k, uid in enumerate(user_ids):
        rows.append(["user", uid, theta.h[k], theta.f[k]])
    for k, nid in enumerate(note_ids):
        rows.append(["note", nid, theta.i[k], theta.g[k]])
    write_tsv(path, list(PARAMS_COLUMNS), rows)


def read_params_tsv(path) -> tuple[LatentParams, tuple[str, ...], tuple[str, ...]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        for col in PARAMS_COLUMNS:
            if col not in (reader.fieldnames or []):
                raise ValueError(f"missing required column {col!r}")
        mu = None
        users: list[tuple[str, float, float]] = []
        notes: list[tuple[str, float, float]] = []
        for row in reader:
            kind = row["kind"]
            if kind == "global":
                mu = float(row["intercept"])
            elif kind == "user":
                users.append((row["id"], float(row["intercept"]), float(row["factor"])))
            elif kind == "note":
                notes.append((row["id"], float(row["intercept"]), float(row["factor"])))
            else:
                raise ValueError(f"unknown row kind {kind!r}")
    if mu is None:
        raise ValueError("missing global row")
    theta = LatentParams(
        mu,
        np.array([u[1] for u in users]),
        np.array([n[1] for n in notes]),
        np.array([u[2] for u in users]),
        np.array([n[2] for n in notes]),
    )
    return theta, tuple(u[0] for u in users), tuple(n[0] for n in notes)


def write_weights_tsv(path, user_ids, sigma2: np.ndarray, weights: np.ndarray) -> None:
    rows = [
        [uid, sigma2[k], weights[k]]
        for k, uid in enumerate(user_ids)
    ]
    write_tsv(path, ["raterParticipantId", "sigma2", "weight"], rows)


def write_frame_tsv(path, frame) -> None:
    """DataFrame to TSV with the deterministic cell formatting."""
    header = [str(c) for c in frame.columns]
    rows = [[row[c] for c in frame.columns] for _, row in frame.iterrows()]
    write_tsv(path, header, rows)


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path, subcommand: str, params: dict, inputs: dict, outputs: dict) -> None:
    """Record a run: resolved parameters, input paths, output hashes."""
    payload = {
        "subcommand": subcommand,
        "params": params,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {name: sha256_file(p) for name, p in outputs.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
