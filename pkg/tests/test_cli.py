import json
import subprocess
import sys

import numpy as np
import pytest

from ivmediate.cli import main
from ivmediate.dataset import load_csv
from ivmediate.estimators import fit_standard, fit_two_stage, partial_f
from ivmediate.report import fmt2, format_estimate

from conftest import FIXTURE_CSV, FIXTURE_MAP

DATA = ["--input", str(FIXTURE_CSV), "--outcome", "hamilton_4m", "--assignment", "intervention",
        "--mediator", "antidep_use", "--x", "past_use_score", "--x", "baseline_use_score"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_fmt2_half_even():
    assert fmt2(0.125) == "0.12"
    assert fmt2(0.375) == "0.38"
    assert fmt2(2.675) == "2.68"
    assert fmt2(-0.004) == "0.00"
    assert fmt2(-1.665) == "-1.66"
    assert format_estimate(-1.0, (-2.0, 0.5)) == "-1.00 (-2.00, 0.50)"


def test_standard_matches_library(capsys):
    code, out, err = run(capsys, "standard", *DATA)
    assert code == 0
    fit = fit_standard(load_csv(FIXTURE_CSV, FIXTURE_MAP))
    row = out.splitlines()[1]
    assert format_estimate(fit.theta_r, fit.ci_theta_r) in row
    assert format_estimate(fit.theta_m, fit.ci_theta_m) in row
    assert "load_report" in err


def test_json_round_trips_full_precision(capsys):
    code, out, _ = run(capsys, "iv", *DATA, "--format", "json")
    doc = json.loads(out)
    data = load_csv(FIXTURE_CSV, FIXTURE_MAP)
    fit = fit_two_stage(data)
    assert doc["fits"]["homoskedastic"]["theta_m"] == fit.theta_m
    assert doc["fits"]["homoskedastic"]["params"] == fit.params.tolist()
    assert doc["diagnostics"]["partial_f"] == partial_f(data).partial_f
    assert doc["schema_version"] == 1


def test_bad_column_exit_2(capsys):
    code, out, err = run(capsys, "standard", *DATA[:-1], "nonexistent")
    assert code == 2
    lines = err.strip().splitlines()
    assert lines[-1].startswith("ivmediate: error[MissingColumn]:")
    assert out == ""


def test_missing_input_file_exit_2(capsys, tmp_path):
    code, _, err = run(capsys, "standard", "--input", str(tmp_path / "none.csv"),
                       "--outcome", "a", "--assignment", "b", "--mediator", "c")
    assert code == 2 and "error[" in err


def test_iv_without_x_is_config_error(capsys):
    code, _, err = run(capsys, "iv", *DATA[:8])
    assert code == 2
    assert "error[ConfigError]" in err and "instrumented covariate" in err


def test_rank_deficiency_exit_3(capsys, tmp_path):
    path = tmp_path / "c.csv"
    rows = ["y,r,m,x"] + [f"{i % 7},{i % 2},{(i * 3) % 5},1" for i in range(30)]
    path.write_text("\n".join(rows) + "\n")
    code, _, err = run(capsys, "iv", "--input", str(path), "--outcome", "y", "--assignment", "r",
                       "--mediator", "m", "--x", "x")
    assert code == 3 and "error[RankDeficient]" in err


def test_iv_covariance_both(capsys):
    _, both, _ = run(capsys, "iv", *DATA, "--covariance", "both", "--format", "json")
    _, homo, _ = run(capsys, "iv", *DATA, "--covariance", "homoskedastic", "--format", "json")
    both, homo = json.loads(both), json.loads(homo)
    assert both["fits"]["homoskedastic"] == homo["fits"]["homoskedastic"]
    assert both["fits"]["sandwich"]["covariance_type"] == "sandwich"
    _, text, _ = run(capsys, "iv", *DATA, "--covariance", "both")
    assert "IV [homoskedastic]" in text and "IV [sandwich]" in text


def test_iv_text_contains_verdict(capsys):
    _, out, _ = run(capsys, "iv", *DATA)
    assert "strong" in out and "odds ratio" in out and "WARNING" not in out


def test_weak_banner(capsys, tmp_path):
    rng = np.random.default_rng(0)
    n = 200
    x = rng.normal(size=n)
    r = (rng.random(n) < 0.5).astype(int)
    m = 0.5 * r + rng.normal(size=n)
    y = m + rng.normal(size=n)
    path = tmp_path / "weak.csv"
    path.write_text("y,r,m,x\n" + "\n".join(f"{a},{b},{c},{d}" for a, b, c, d in zip(y, r, m, x)))
    code, out, _ = run(capsys, "iv", "--input", str(path), "--outcome", "y", "--assignment", "r",
                       "--mediator", "m", "--x", "x")
    assert code == 0
    assert "WARNING: weak instruments" in out


def test_sensitivity_requires_grid(capsys):
    code, _, err = run(capsys, "sensitivity", *DATA)
    assert code == 2 and "tau" in err


def test_sensitivity_single_zero_point_equals_iv(capsys):
    _, sens, _ = run(capsys, "sensitivity", *DATA, "--tau-r", "0,0", "--tau-m", "0,0", "--format", "json")
    _, iv, _ = run(capsys, "iv", *DATA, "--format", "json")
    row = json.loads(sens)["grid"][0]
    fit = json.loads(iv)["fits"]["homoskedastic"]
    assert row["theta_r"] == fit["theta_r"] and row["theta_m"] == fit["theta_m"]
    assert row["ci_theta_m"] == fit["ci_theta_m"]


def test_sensitivity_bad_vector(capsys):
    code, _, err = run(capsys, "sensitivity", *DATA, "--tau-r", "0,x", "--tau-m", "0,0")
    assert code == 2 and "cannot parse vector" in err


def test_sensitivity_csv(capsys):
    code, out, _ = run(capsys, "sensitivity", *DATA, "--tau-r", "0,0", "--tau-r", "1,1",
                       "--tau-m", "0,0", "--format", "csv")
    assert code == 0 and out.count("\n") == 3


def test_config_file_and_flag_precedence(capsys, tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(
        f"input: {FIXTURE_CSV}\noutcome: hamilton_4m\nassignment: intervention\n"
        "mediator: antidep_use\nx: [past_use_score, baseline_use_score]\nci-level: 0.9\n"
        "format: json\n")
    _, out, _ = run(capsys, "iv", "--config", str(cfg))
    assert json.loads(out)["ci_level"] == 0.9
    _, out, _ = run(capsys, "iv", "--config", str(cfg), "--ci-level", "0.8")
    assert json.loads(out)["ci_level"] == 0.8
    bad = tmp_path / "bad.json"
    bad.write_text('{"unknown_key": 1}')
    code, _, err = run(capsys, "iv", "--config", str(bad))
    assert code == 2 and "unknown config key" in err


def test_out_file(capsys, tmp_path):
    target = tmp_path / "report.txt"
    code, out, _ = run(capsys, "standard", *DATA, "--out", str(target))
    assert code == 0 and out == ""
    assert target.read_text().startswith("Method")


def test_simulate_validation(capsys):
    code, _, err = run(capsys, "simulate", "--scenario", "homoskedastic", "--reps", "1")
    assert code == 2 and "reps" in err
    code, _, err = run(capsys, "simulate", "--reps", "5")
    assert code == 2
    code, _, err = run(capsys, "simulate", "--scenario", "nope", "--reps", "5")
    assert code == 2


def test_simulate_deterministic(capsys):
    argv = ["simulate", "--scenario", "homoskedastic", "--reps", "20", "--n", "200", "--seed", "3"]
    _, a, _ = run(capsys, *argv)
    _, b, _ = run(capsys, *argv)
    assert a == b and "estimator=standard" in a and "estimator=two_stage" in a
    _, c, _ = run(capsys, *argv, "--format", "json")
    _, d, _ = run(capsys, *argv, "--format", "json")
    assert c == d
    assert json.loads(c)["scenario"]["seed"] == 3


def test_simulate_bundled_confounded_scenario(capsys):
    code, out, _ = run(capsys, "simulate", "--scenario", "confounded-heterogeneous",
                       "--reps", "300", "--format", "json")
    assert code == 0
    reports = {r["estimator"]: r for r in json.loads(out)["reports"]}
    z = lambda r: abs(r["bias"]["theta_m"]) / r["bias_mc_se"]["theta_m"]
    assert z(reports["two_stage"]) < 3
    assert z(reports["standard"]) > 5


def test_simulate_with_moments(capsys):
    code, out, _ = run(capsys, "simulate", "--scenario", "tau-violation", "--reps", "3",
                       "--n", "500", "--estimator", "at_tau", "--moments", "20000", "--transform")
    assert code == 0 and "moment checks" in out and "transformed=True" in out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ivmediate", "standard", *DATA],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("Method")
