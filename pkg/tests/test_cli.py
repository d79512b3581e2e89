import json
import hashlib
from pathlib import Path

import pytest

from notefactor.cli import main
from notefactor.dataio import load_manifest, read_params_tsv


def _hash_tree(d: Path) -> dict:
    out = {}
    for p in sorted(d.iterdir()):
        if p.is_file():
            out[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def _simulate(tmp, **kw):
    args = ["simulate", "--out-dir", str(tmp), "--users", "40", "--notes", "30",
            "--p", "1.0", "--seed", "5"]
    for k, v in kw.items():
        args += [f"--{k.replace('_', '-')}", str(v)]
    assert main(args) == 0
    return tmp / "ratings.tsv"


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def test_simulate_batch_row_count(tmp_path):
    _simulate(tmp_path)
    lines = (tmp_path / "ratings.tsv").read_text().strip().splitlines()
    assert len(lines) == 1 + 40 * 30  # header + |Omega| at p = 1
    assert (tmp_path / "truth.json").exists()
    manifest = load_manifest(tmp_path / "run_manifest.json")
    assert manifest["subcommand"] == "simulate"
    assert set(manifest["outputs"]) == {"ratings.tsv", "truth.json"}


def test_simulate_same_seed_identical_hashes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    _simulate(a)
    _simulate(b)
    ha, hb = _hash_tree(a), _hash_tree(b)
    assert ha == hb


def test_simulate_refuses_overwrite_without_force(tmp_path):
    _simulate(tmp_path)
    code = main(["simulate", "--out-dir", str(tmp_path), "--users", "10", "--notes", "10"])
    assert code == 1
    assert main([
        "simulate", "--out-dir", str(tmp_path), "--users", "10", "--notes", "10", "--force",
    ]) == 0


# ---------------------------------------------------------------------------
# fit / twostage
# ---------------------------------------------------------------------------

def test_fit_writes_params(tmp_path):
    data = _simulate(tmp_path / "sim", sigma="0.1")
    out = tmp_path / "fit"
    assert main(["fit", "--out-dir", str(out), "--data", str(data),
                 "--min-ratings-per-note", "3", "--min-notes-per-rater", "3"]) == 0
    theta, user_ids, note_ids = read_params_tsv(out / "params.tsv")
    assert theta.n_users == 40 and theta.n_notes == 30
    rows = (out / "params.tsv").read_text().strip().splitlines()
    assert len(rows) == 1 + 1 + 40 + 30  # header + global + users + notes


def test_fit_filter_empties_is_data_error(tmp_path):
    data = _simulate(tmp_path / "sim")
    out = tmp_path / "fit"
    code = main(["fit", "--out-dir", str(out), "--data", str(data),
                 "--min-ratings-per-note", "100", "--min-notes-per-rater", "100"])
    assert code == 2


def test_fit_missing_data_flag_usage_error(tmp_path):
    assert main(["fit", "--out-dir", str(tmp_path)]) == 1


def test_twostage_noiseless_floor_weights(tmp_path):
    # tight latent spreads keep every report inside [0, 1], so the model
    # can interpolate the written TSV exactly
    data = _simulate(tmp_path / "sim", sigma="0.0", sigma_h="0.02",
                     sigma_i="0.02", sigma_f="0.05", sigma_g="0.05")
    out = tmp_path / "ts"
    with pytest.warns(UserWarning):
        code = main([
            "twostage", "--out-dir", str(out), "--data", str(data),
            "--min-ratings-per-note", "3", "--min-notes-per-rater", "3",
            "--lambda-u", "1e-8", "--lambda-n", "1e-8",
        ])
    assert code == 0
    rows = (out / "weights.tsv").read_text().strip().splitlines()[1:]
    weights = {r.split("\t")[0]: float(r.split("\t")[2]) for r in rows}
    assert all(w == 1e4 for w in weights.values())
    assert (out / "stage1_params.tsv").exists()


# ---------------------------------------------------------------------------
# evaluate / analyze
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def stream_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("stream")
    assert main([
        "simulate", "--out-dir", str(tmp), "--users", "50", "--weeks", "8",
        "--notes-per-week", "8", "--rating-prob", "0.6",
        "--sigma", "0.05", "--sigma-high", "0.5", "--seed", "3",
    ]) == 0
    return tmp


def test_evaluate_and_analyze_roundtrip(stream_dir, tmp_path):
    out = tmp_path / "eval"
    assert main([
        "evaluate", "--out-dir", str(out), "--data", str(stream_dir / "ratings.tsv"),
        "--warm-weeks", "3", "--min-ratings-per-note", "3", "--min-notes-per-rater", "3",
    ]) == 0
    assert (out / "eval_report.tsv").exists()
    summary = (out / "eval_summary.txt").read_text()
    assert "twostage vs baseline" in summary

    an = tmp_path / "an"
    report_frame = (out / "eval_report.tsv").read_text().splitlines()
    post_week = report_frame[3].split("\t")[0]  # some scored week label
    assert main([
        "analyze", "--out-dir", str(an), "--report", str(out / "eval_report.tsv"),
        "--post-week", post_week, "--n-perm", "200",
    ]) == 0
    assert (an / "analysis_comparison.tsv").exists()
    assert "gap" in (an / "analysis_summary.txt").read_text()


def test_evaluate_warm_weeks_usage_error(stream_dir, tmp_path):
    code = main([
        "evaluate", "--out-dir", str(tmp_path), "--data", str(stream_dir / "ratings.tsv"),
        "--warm-weeks", "99",
    ])
    assert code == 1


def test_analyze_missing_column_data_error(tmp_path):
    bad = tmp_path / "bad.tsv"
    bad.write_text("week\tmethod\n2023-01-02\tbaseline\n")
    code = main(["analyze", "--out-dir", str(tmp_path / "o"), "--report", str(bad)])
    assert code == 2


# ---------------------------------------------------------------------------
# theory
# ---------------------------------------------------------------------------

def test_theory_quick_exit_zero(tmp_path):
    assert main(["theory", "--out-dir", str(tmp_path), "--scale", "quick"]) == 0
    lines = (tmp_path / "theory_summary.txt").read_text().splitlines()
    assert all(l.startswith("[PASS]") for l in lines[:-1])


def test_theory_self_test_exits_nonzero(tmp_path):
    code = main(["theory", "--out-dir", str(tmp_path), "--scale", "quick", "--self-test"])
    assert code == 3


# ---------------------------------------------------------------------------
# config files and manifest reruns
# ---------------------------------------------------------------------------

def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"users": 12, "notes": 10, "seed": 9}))
    out = tmp_path / "out"
    assert main(["simulate", "--out-dir", str(out), "--config", str(cfg), "--notes", "11"]) == 0
    manifest = load_manifest(out / "run_manifest.json")
    assert manifest["params"]["users"] == 12
    assert manifest["params"]["notes"] == 11  # flag wins


def test_config_unknown_key_is_usage_error(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"userz": 12}))
    assert main(["simulate", "--out-dir", str(tmp_path), "--config", str(cfg)]) == 1


def test_rerun_reproduces_byte_identical(tmp_path):
    first = tmp_path / "first"
    _simulate(first)
    second = tmp_path / "second"
    assert main(["rerun", str(first / "run_manifest.json"), "--out-dir", str(second)]) == 0
    ha, hb = _hash_tree(first), _hash_tree(second)
    assert ha == hb


def test_rerun_fit_chain(tmp_path):
    data = _simulate(tmp_path / "sim")
    out1 = tmp_path / "f1"
    assert main(["fit", "--out-dir", str(out1), "--data", str(data),
                 "--min-ratings-per-note", "3", "--min-notes-per-rater", "3"]) == 0
    out2 = tmp_path / "f2"
    assert main(["rerun", str(out1 / "run_manifest.json"), "--out-dir", str(out2)]) == 0
    assert _hash_tree(out1) == _hash_tree(out2)


def test_help_enumerates_config_keys(capsys):
    with pytest.raises(SystemExit):
        main(["simulate", "--help"])
    text = capsys.readouterr().out
    for key in ("--users", "--notes", "--kappa", "--sigma-m", "--discretize", "--seed"):
        assert key in text


def test_env_var_default_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("NOTEFACTOR_DATA_DIR", str(tmp_path / "envout"))
    assert main(["simulate", "--users", "10", "--notes", "10", "--seed", "1"]) == 0
    assert (tmp_path / "envout" / "ratings.tsv").exists()
