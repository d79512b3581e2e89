"""Command-line entry point wiring the library into reproducible runs.

Subcommands: simulate, fit, twostage, evaluate, theory, analyze, rerun.
Every run writes a ``run_manifest.json`` next to its outputs recording the
resolved parameters, input paths and sha256 hashes of every artifact;
``rerun`` re-executes a manifest and reproduces the outputs byte for byte.

Exit codes: 0 success, 1 usage error, 2 data error, 3 acceptance failure.
Parameters may come from a JSON config file (``--config``), with explicit
flags taking precedence; unknown config keys are hard errors.  The
``NOTEFACTOR_DATA_DIR`` environment variable supplies the default output
directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .evaluation import (
    BASELINE,
    TWOSTAGE,
    EvalReport,
    compare_methods,
    ingest_ratings_tsv,
    rolling_evaluate,
    weekly_split,
)
from .factorization import FitConfig, filter_observations, fit
from .model import ObservationSet
from .simulation import (
    BoundedDist,
    NoiseSpec,
    RhoSpec,
    SimConfig,
    StreamConfig,
    generate_dataset,
    generate_weekly_events,
)
from .stats import permutation_test, weekly_gap_did
from .theory import FULL_SCALE, QUICK_SCALE, run_theory_suite
from .twostage import two_stage_fit


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class AcceptanceFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        raise UsageError(message)


# Schema: dest -> (type, default, help).  Argparse defaults stay None so
# config-file values can slot in under explicit flags.
COMMON_PARAMS = {
    "seed": (int, 0, "top-level random seed"),
    "threads": (int, 1, "parallelism cap (module internals; current build is serial)"),
}

SIMULATE_PARAMS = {
    **COMMON_PARAMS,
    "users": (int, 200, "number of raters"),
    "notes": (int, 200, "number of notes (stream mode derives this)"),
    "p": (float, 1.0, "observation probability per (user, note) cell"),
    "mu": (float, 0.5, "global intercept"),
    "mu_f": (float, 0.5, "mean rater factor (majority orientation)"),
    "sigma_h": (float, 0.3, "rater-intercept spread (truncated normal sd)"),
    "sigma_i": (float, 0.3, "note-intercept spread"),
    "sigma_f": (float, 1.0, "rater-factor spread"),
    "sigma_g": (float, 0.35, "note-factor spread"),
    "sigma": (float, 0.1, "rating noise sd (constant across users)"),
    "sigma_high": (float, 0.0, "if > 0, two-group noise: this sd for frac_high of users"),
    "frac_high": (float, 0.5, "fraction of users in the high-noise group"),
    "kappa": (float, 0.0, "conformity slope: rho(c) = 1 - kappa * c"),
    "sigma_m": (float, 0.0, "consensus forecast noise scale"),
    "discretize": (bool, False, "emit discretized {0, 0.5, 1} reports"),
    "weeks": (int, 0, "if > 0, emit a weekly stream with this many weeks"),
    "notes_per_week": (int, 25, "stream mode: note arrivals per week"),
    "rating_prob": (float, 0.5, "stream mode: chance a user rates an active note"),
}

FIT_PARAMS = {
    **COMMON_PARAMS,
    "data": (str, None, "input ratings TSV"),
    "lambda_u": (float, None, "user-side regularizer (default 0.03 |Omega| / (U + N))"),
    "lambda_n": (float, None, "note-side regularizer (same default)"),
    "max_sweeps": (int, 500, "maximum coordinate-descent sweeps"),
    "rel_tol": (float, 1e-8, "relative objective-change stopping rule"),
    "min_ratings_per_note": (int, 5, "note floor for the observation filter"),
    "min_notes_per_rater": (int, 10, "rater floor for the observation filter"),
    "no_filter": (bool, False, "skip the observation filter"),
}

TWOSTAGE_PARAMS = {
    **FIT_PARAMS,
    "variance_convention": (str, "mean_square", "mean_square | sample_variance"),
    "weight_floor": (float, 1e-4, "variance floor before inversion"),
    "reweight_rounds": (int, 1, "residual/variance/refit cycles"),
}

EVALUATE_PARAMS = {
    **FIT_PARAMS,
    "warm_weeks": (int, 4, "weeks consumed before scoring starts"),
    "week_anchor": (int, 0, "week boundary weekday, 0 = Monday 00:00 UTC"),
    "eligibility": (str, "fitted", "OOS pair rule: fitted | active"),
}

THEORY_PARAMS = {
    **COMMON_PARAMS,
    "scale": (str, "full", "scenario sizes: full | quick"),
    "self_test": (bool, False, "inject a wrong prediction; the suite must fail"),
}

ANALYZE_PARAMS = {
    **COMMON_PARAMS,
    "report": (str, None, "eval_report.tsv produced by the evaluate subcommand"),
    "post_week": (str, None, "first week label (ISO date) of the post period"),
    "metric": (str, "oos_mar", "metric column for the pre/post gap analysis"),
    "hac_lags": (int, 4, "Newey-West lag for the level-shift regression"),
    "n_perm": (int, 1000, "permutation iterations"),
}

SCHEMAS = {
    "simulate": SIMULATE_PARAMS,
    "fit": FIT_PARAMS,
    "twostage": TWOSTAGE_PARAMS,
    "evaluate": EVALUATE_PARAMS,
    "theory": THEORY_PARAMS,
    "analyze": ANALYZE_PARAMS,
}


def _add_schema_args(parser: argparse.ArgumentParser, schema: dict) -> None:
    parser.add_argument("--config", type=str, default=None, help="JSON config file")
    parser.add_argument("--out-dir", type=str, default=None, help="output directory")
    parser.add_argument("--force", action="store_true", help="overwrite existing outputs")
    for dest, (typ, default, help_text) in schema.items():
        flag = "--" + dest.replace("_", "-")
        if typ is bool:
            parser.add_argument(flag, dest=dest, action=argparse.BooleanOptionalAction,
                                default=None, help=f"{help_text} (default: {default})")
        else:
            parser.add_argument(flag, dest=dest, type=typ, default=None,
                                help=f"{help_text} (default: {default})")


def _resolve_params(args: argparse.Namespace, schema: dict) -> dict:
    """Merge schema defaults, config file and explicit flags (flags win)."""
    resolved = {dest: default for dest, (_, default, _) in schema.items()}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                config = json.load(fh)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}")
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}")
        if not isinstance(config, dict):
            raise UsageError("config file must hold a JSON object")
        for key, value in config.items():
            if key not in schema:
                raise UsageError(f"unknown config key {key!r}")
            resolved[key] = value
    for dest in schema:
        value = getattr(args, dest)
        if value is not None:
            resolved[dest] = value
    return resolved


def _out_dir(args: argparse.Namespace) -> Path:
    if args.out_dir is not None:
        base = Path(args.out_dir)
    elif os.environ.get("NOTEFACTOR_DATA_DIR"):
        base = Path(os.environ["NOTEFACTOR_DATA_DIR"])
    else:
        base = Path(".")
    base.mkdir(parents=True, exist_ok=True)
    return base


def _claim_outputs(out_dir: Path, names: list[str], force: bool) -> dict[str, Path]:
    paths = {name: out_dir / name for name in names}
    clashes = [str(p) for p in paths.values() if p.exists()]
    if clashes and not force:
        raise UsageError(
            "refusing to overwrite existing outputs (use --force): " + ", ".join(clashes)
        )
    return paths


def _sim_config(p: dict) -> SimConfig:
    if p["sigma_high"] > 0.0:
        noise = NoiseSpec("two_group", sigma_low=p["sigma"], sigma_high=p["sigma_high"],
                          frac_high=p["frac_high"])
    else:
        noise = NoiseSpec("constant", sigma=p["sigma"])
    return SimConfig(
        n_users=p["users"],
        n_notes=p["notes"],
        p_observe=p["p"],
        mu=p["mu"],
        mu_f=p["mu_f"],
        dist_h=BoundedDist("truncnormal", 0.0, p["sigma_h"]),
        dist_i=BoundedDist("truncnormal", 0.0, p["sigma_i"]),
        dist_f=BoundedDist("truncnormal", p["mu_f"], p["sigma_f"]),
        dist_g=BoundedDist("truncnormal", 0.0, p["sigma_g"]),
        noise=noise,
        rho=RhoSpec("linear", kappa=p["kappa"]),
        sigma_m=p["sigma_m"],
        discretize=p["discretize"],
        seed=p["seed"],
    )


def cmd_simulate(params: dict, out_dir: Path, force: bool) -> tuple[dict, int]:
    outputs = _claim_outputs(out_dir, ["ratings.tsv", "truth.json"], force)
    if params["weeks"] > 0:
        params = dict(params)
        params["notes"] = params["weeks"] * params["notes_per_week"]
        cfg = _sim_config(params)
        stream = StreamConfig(
            n_weeks=params["weeks"],
            notes_per_week=params["notes_per_week"],
            rating_prob=params["rating_prob"],
        )
        events, truth = generate_weekly_events(cfg, stream)
    else:
        cfg = _sim_config(params)
        obs, truth = generate_dataset(cfg)
        events = dataio.events_from_observations(obs, base_ms=StreamConfig().start_ms)
    dataio.write_ratings_tsv(outputs["ratings.tsv"], events)
    dataio.write_truth_json(outputs["truth.json"], truth)
    print(f"wrote {len(events)} ratings to {outputs['ratings.tsv']}")
    return {"params": params, "inputs": {}, "outputs": outputs}, 0


def _load_observations(params: dict) -> ObservationSet:
    if not params.get("data"):
        raise UsageError("--data is required")
    path = Path(params["data"])
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    try:
        ingest = ingest_ratings_tsv(path)
    except ValueError as exc:
        raise DataError(str(exc))
    if not ingest.events:
        raise DataError(f"no usable ratings in {path}")
    obs = ObservationSet.from_events(ingest.events)
    if not params["no_filter"]:
        obs = filter_observations(
            obs, params["min_ratings_per_note"], params["min_notes_per_rater"]
        )
        if obs.n_entries == 0:
            raise DataError(
                "observation filter emptied the dataset "
                f"(min_ratings_per_note={params['min_ratings_per_note']}, "
                f"min_notes_per_rater={params['min_notes_per_rater']})"
            )
    return obs


def _fit_config(params: dict) -> FitConfig:
    return FitConfig(
        lambda_u=params["lambda_u"],
        lambda_n=params["lambda_n"],
        max_sweeps=params["max_sweeps"],
        rel_tol=params["rel_tol"],
        seed=params["seed"],
    )


def cmd_fit(params: dict, out_dir: Path, force: bool) -> tuple[dict, int]:
    outputs = _claim_outputs(out_dir, ["params.tsv"], force)
    obs = _load_observations(params)
    result = fit(obs, _fit_config(params))
    dataio.write_params_tsv(outputs["params.tsv"], result.params, obs.user_ids, obs.note_ids)
    print(
        f"fit {obs.n_entries} ratings ({obs.n_users} raters, {obs.n_notes} notes); "
        f"objective {result.objective:.6g} after {result.n_sweeps} sweeps"
    )
    return {"params": params, "inputs": {"data": params["data"]}, "outputs": outputs}, 0


def cmd_twostage(params: dict, out_dir: Path, force: bool) -> tuple[dict, int]:
    outputs = _claim_outputs(
        out_dir, ["params.tsv", "stage1_params.tsv", "weights.tsv"], force
    )
    obs = _load_observations(params)
    result = two_stage_fit(
        obs,
        _fit_config(params),
        variance_convention=params["variance_convention"],
        weight_floor=params["weight_floor"],
        max_reweight_rounds=params["reweight_rounds"],
    )
    dataio.write_params_tsv(outputs["params.tsv"], result.theta_ts, obs.user_ids, obs.note_ids)
    dataio.write_params_tsv(outputs["stage1_params.tsv"], result.stage1, obs.user_ids, obs.note_ids)
    dataio.write_weights_tsv(outputs["weights.tsv"], obs.user_ids, result.sigma2, result.weights.w)
    print(
        f"two-stage fit of {obs.n_entries} ratings; weight range "
        f"[{result.weights.w.min():.6g}, {result.weights.w.max():.6g}]"
    )
    return {"params": params, "inputs": {"data": params["data"]}, "outputs": outputs}, 0


def cmd_evaluate(params: dict, out_dir: Path, force: bool) -> tuple[dict, int]:
    outputs = _claim_outputs(out_dir, ["eval_report.tsv", "eval_summary.txt"], force)
    if not params.get("data"):
        raise UsageError("--data is required")
    path = Path(params["data"])
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    try:
        ingest = ingest_ratings_tsv(path)
    except ValueError as exc:
        raise DataError(str(exc))
    stream = weekly_split(ingest.events, week_anchor=params["week_anchor"])
    if stream.n_weeks <= params["warm_weeks"]:
        raise UsageError(
            f"warm_weeks={params['warm_weeks']} but the stream only has {stream.n_weeks} weeks"
        )
    report = rolling_evaluate(
        stream,
        _fit_config(params),
        warm_weeks=params["warm_weeks"],
        min_ratings_per_note=params["min_ratings_per_note"],
        min_notes_per_rater=params["min_notes_per_rater"],
        eligibility=params["eligibility"],
    )
    dataio.write_frame_tsv(outputs["eval_report.tsv"], report.to_frame())
    lines = []
    for method in report.methods():
        agg = report.aggregate(method)
        lines.append(
            f"{method}: in-sample MSE {_fmt_opt(agg['in_sample_mse'])}, "
            f"OOS MSE {_fmt_opt(agg['oos_mse'])}, OOS MAR {_fmt_opt(agg['oos_mar'])}, "
            f"OOS MedAR {_fmt_opt(agg['oos_medar'])}"
        )
    comparison = compare_methods(report)
    avg = comparison[comparison["week"] == "average"]
    if len(avg):
        row = avg.iloc[0]
        lines.append(
            "twostage vs baseline average improvement: "
            f"OOS MAR {_fmt_pct(row['improvement_oos_mar'])}, "
            f"OOS MedAR {_fmt_pct(row['improvement_oos_medar'])}, "
            f"OOS MSE {_fmt_pct(row['improvement_oos_mse'])}"
        )
    with open(outputs["eval_summary.txt"], "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    return {"params": params, "inputs": {"data": params["data"]}, "outputs": outputs}, 0


def _fmt_opt(v) -> str:
    return "n/a" if v is None else f"{v:.5f}"


def _fmt_pct(v) -> str:
    try:
        val = float(v)
    except (TypeError, ValueError):
        return "n/a"
    if np.isnan(val):
        return "n/a"
    return f"{100.0 * val:+.2f}%"


def cmd_theory(params: dict, out_dir: Path, force: bool) -> tuple[dict, int]:
    outputs = _claim_outputs(out_dir, ["theory_report.tsv", "theory_summary.txt"], force)
    if params["scale"] not in ("full", "quick"):
        raise UsageError("--scale must be full or quick")
    scale = FULL_SCALE if params["scale"] == "full" else QUICK_SCALE
    report = run_theory_suite(scale, seed=params["seed"], self_test=params["self_test"])
    dataio.write_frame_tsv(outputs["theory_report.tsv"], report.to_frame())
    lines = report.summary_lines()
    with open(outputs["theory_summary.txt"], "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    code = 0 if report.all_passed else 3
    return {"params": params, "inputs": {}, "outputs": outputs}, code


def cmd_analyze(params: dict, out_dir: Path, force: bool) -> tuple[dict, int]:
    outputs = _claim_outputs(out_dir, ["analysis_comparison.tsv", "analysis_summary.txt"], force)
    if not params.get("report"):
        raise UsageError("--report is required")
    report_path = Path(params["report"])
    if not report_path.exists():
        raise DataError(f"input file not found: {report_path}")
    import pandas as pd

    frame = pd.read_csv(report_path, sep="\t")
    needed = {"week", "method", params["metric"]}
    missing = needed - set(frame.columns)
    if missing:
        raise DataError(f"report is missing column(s): {sorted(missing)}")
    report = _eval_report_from_frame(frame)
    comparison = compare_methods(report)
    dataio.write_frame_tsv(outputs["analysis_comparison.tsv"], comparison)

    lines = []
    if params["post_week"] is not None:
        metric = params["metric"]
        base = frame[frame["method"] == BASELINE].set_index("week")[metric]
        ts = frame[frame["method"] == TWOSTAGE].set_index("week")[metric]
        weeks = [w for w in base.index if w in ts.index]
        gaps = np.array([base[w] - ts[w] for w in weeks], dtype=float)
        post = np.array([w >= params["post_week"] for w in weeks])
        keep = np.isfinite(gaps)
        gaps, post = gaps[keep], post[keep]
        if post.all() or not post.any():
            raise DataError("post_week must split the scored weeks into non-empty pre and post")
        did = weekly_gap_did(gaps, post, hac_lags=params["hac_lags"])
        p_perm = permutation_test(
            lambda data, labels: float(np.mean(data[labels]) - np.mean(data[~labels])),
            gaps,
            post,
            n_perm=params["n_perm"],
            seed=params["seed"],
        )
        lines.append(
            f"{metric} gap (baseline - twostage), post shift: beta={did.beta:.6g} "
            f"se={did.se:.6g} ci=({did.ci_low:.6g}, {did.ci_high:.6g}) p={did.p_value:.4g} "
            f"permutation p={p_perm:.4g}"
        )
    avg = comparison[comparison["week"] == "average"]
    if len(avg):
        row = avg.iloc[0]
        lines.append(
            "average improvement: "
            f"OOS MAR {_fmt_pct(row.get('improvement_oos_mar'))}, "
            f"OOS MedAR {_fmt_pct(row.get('improvement_oos_medar'))}"
        )
    with open(outputs["analysis_summary.txt"], "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    return {"params": params, "inputs": {"report": params["report"]}, "outputs": outputs}, 0


def _eval_report_from_frame(frame) -> EvalReport:
    from .evaluation import WeekMetrics

    report = EvalReport()
    for _, row in frame.iterrows():
        report.rows.append(
            WeekMetrics(
                week=str(row["week"]),
                method=str(row["method"]),
                n_in_sample=int(row.get("n_in_sample", 0) or 0),
                in_sample_mse=_opt_float(row.get("in_sample_mse")),
                n_oos=int(row.get("n_oos", 0) or 0),
                oos_mse=_opt_float(row.get("oos_mse")),
                oos_mar=_opt_float(row.get("oos_mar")),
                oos_medar=_opt_float(row.get("oos_medar")),
            )
        )
    return report


def _opt_float(v):
    import pandas as pd

    if v is None or (isinstance(v, float) and np.isnan(v)) or pd.isna(v):
        return None
    return float(v)


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "twostage": cmd_twostage,
    "evaluate": cmd_evaluate,
    "theory": cmd_theory,
    "analyze": cmd_analyze,
}


def build_parser() -> _Parser:
    parser = _Parser(prog="notefactor", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name, help=f"{name} subcommand")
        _add_schema_args(p, schema)
    rerun = sub.add_parser("rerun", help="re-execute a recorded run manifest")
    rerun.add_argument("manifest", type=str, help="path to run_manifest.json")
    rerun.add_argument("--out-dir", type=str, default=None)
    rerun.add_argument("--force", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "rerun":
            manifest = dataio.load_manifest(args.manifest)
            command = manifest["subcommand"]
            if command not in COMMANDS:
                raise UsageError(f"manifest names unknown subcommand {command!r}")
            params = manifest["params"]
            params.update(manifest.get("inputs", {}))
            out_dir = Path(args.out_dir) if args.out_dir else Path(args.manifest).parent
            out_dir.mkdir(parents=True, exist_ok=True)
            payload, code = COMMANDS[command](params, out_dir, args.force)
        else:
            command = args.command
            params = _resolve_params(args, SCHEMAS[command])
            out_dir = _out_dir(args)
            payload, code = COMMANDS[command](params, out_dir, args.force)
        dataio.write_manifest(
            out_dir / "run_manifest.json",
            command,
            payload["params"],
            payload["inputs"],
            payload["outputs"],
        )
        return code
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except AcceptanceFailure as exc:
        print(f"acceptance failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
