import csv
import json

import numpy as np
import pytest

from hjhomog._validation import ConfigurationError
from hjhomog.cli import EXIT_CHECKS, EXIT_CONFIG, EXIT_OK, main
from hjhomog.config import OUTPUT_ENV_VAR, ExperimentConfig, derive_seed
from hjhomog.experiments import config_from_manifest, describe

FAST = ["--set", "environment.window=-150,150", "--set", "theta.count=9",
        "--set", "montecarlo.t=2", "--set", "montecarlo.dt=0.01",
        "--set", "montecarlo.n_paths=160"]


def _csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_defaults_validate_and_roundtrip():
    cfg = ExperimentConfig()
    again = ExperimentConfig.from_ini(cfg.to_ini())
    assert again == cfg
    assert again.fingerprint() == cfg.fingerprint()
    assert cfg.theta_grid.size == 81


@pytest.mark.parametrize("text", ["[bogus]\nx = 1\n", "[model]\ngamma = 1\n",
                                  "[model]\nbeta = -1\n", "[run]\nformat_version = 2\n",
                                  "[montecarlo]\nbatches = 8\n", "[tolerances]\ntol_u = -1\n",
                                  "not an ini"])
def test_bad_config_rejected(text):
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_ini(text)


def test_tol_u_zero_accepted():
    assert ExperimentConfig.from_ini("[tolerances]\ntol_u = 0\n").tol_u == 0.0


def test_seed_derivation():
    assert derive_seed(1, "a") == derive_seed(1, "a")
    assert derive_seed(1, "a") != derive_seed(1, "b")
    assert derive_seed(1, "a", 0) != derive_seed(1, "a", 1)
    assert 0 <= derive_seed(2 ** 62, "mc") < 2 ** 63


def test_overrides_win_over_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[model]\nbeta = 2\nc = 0.5\n")
    cfg = ExperimentConfig.from_file(path, {"model.c": "1.5"})
    assert (cfg.beta, cfg.c) == (2.0, 1.5)


def test_cli_unknown_key_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[model]\ngamma = 3\n")
    assert main(["describe", "--config", str(path)]) == EXIT_CONFIG
    assert "gamma" in capsys.readouterr().err


def test_cli_missing_config_file(tmp_path):
    assert main(["describe", "--config", str(tmp_path / "nope.ini")]) == EXIT_CONFIG


def test_describe_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["describe", "--seed", "5", "--output", str(a)]) == EXIT_OK
    assert main(["describe", "--seed", "5", "--output", str(b)]) == EXIT_OK
    capsys.readouterr()
    assert a.read_bytes() == b.read_bytes()
    manifest = json.loads(a.read_text())
    cfg = config_from_manifest(manifest)
    assert cfg.seed == 5
    assert describe(cfg)["fingerprint"] == manifest["fingerprint"]


def test_output_dir_from_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(OUTPUT_ENV_VAR, str(tmp_path / "envout"))
    assert main(["free-energy", "--set", "environment.process=constant",
                 "--set", "theta.count=5"]) == EXIT_OK
    capsys.readouterr()
    rows = _csv(tmp_path / "envout" / "free_energy.csv")
    assert list(rows[0]) == ["theta", "lambda_o", "Lambda", "flat", "residual"]
    assert [float(r["Lambda"]) for r in rows] == pytest.approx(
        [1 + 0.5 * t * t for t in np.linspace(-4, 4, 5)], abs=1e-7)


def test_out_flag_beats_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(OUTPUT_ENV_VAR, str(tmp_path / "envout"))
    out = tmp_path / "flag"
    assert main(["effective", "--out", str(out), "--set", "environment.process=constant",
                 "--set", "theta.count=5"]) == EXIT_OK
    capsys.readouterr()
    rows = _csv(out / "effective.csv")
    assert list(rows[0]) == ["theta", "H_bar", "regime", "theta_bar", "bound_CUB1",
                             "bound_CLB1", "convexity_flag"]
    assert not (tmp_path / "envout").exists()


def test_env_gen_and_reuse(tmp_path, capsys):
    path = tmp_path / "env.json"
    assert main(["env", "gen", "--output", str(path), "--seed", "3",
                 "--set", "environment.window=-100,100"]) == EXIT_OK
    assert main(["env", "audit", "--env", str(path)]) == EXIT_OK
    out = capsys.readouterr().out.strip().splitlines()
    assert json.loads(out[0])["record"] == "env"


def test_figure1_zero_control_matches_lambda(tmp_path, capsys):
    out = tmp_path / "f"
    assert main(["figure1", "--out", str(out), "--set", "figure1.weak_pair=1,0",
                 "--set", "figure1.witness_thetas=1"] + FAST) == EXIT_OK
    capsys.readouterr()
    lam = _csv(out / "lambda_curve.csv")
    weak = _csv(out / "figure1_weak.csv")
    assert list(weak[0]) == ["theta", "H_bar", "dashed", "Lambda", "bound_CUB1", "bound_CLB1",
                             "regime", "theta_bar", "convexity_flag"]
    assert [r["H_bar"] for r in weak] == [r["Lambda"] for r in lam]


def test_figure1_regimes(tmp_path, capsys):
    out = tmp_path / "f"
    assert main(["figure1", "--out", str(out), "--set", "environment.process=constant",
                 "--set", "figure1.witness_thetas=3"] + FAST) == EXIT_OK
    capsys.readouterr()
    recs = [json.loads(line) for line in (out / "figure1.jsonl").read_text().splitlines()]
    weak, strong = recs[0], recs[1]
    assert weak["regime"] == "weak" and weak["convex"]
    assert strong["regime"] == "strong" and not strong["convex"]
    assert strong["theta_bar"] == pytest.approx(2 - np.sqrt(2), abs=1e-8)
    assert weak["plateau_value"] == 0.5 and strong["plateau_value"] == 0.0


@pytest.mark.parametrize("process", ["constant", "periodic"])
def test_properties_pass(tmp_path, capsys, process):
    out = tmp_path / process
    code = main(["properties", "--out", str(out), "--set", f"environment.process={process}",
                 "--set", "environment.window=-300,300", "--set", "theta.count=9",
                 "--set", "montecarlo.t=2", "--set", "montecarlo.dt=0.01",
                 "--set", "montecarlo.n_paths=320", "--set", "pde.epsilons=0.5,0.25"])
    capsys.readouterr()
    assert code == EXIT_OK
    assert (out / "properties.jsonl").exists()


def test_properties_tol_u_zero_reports_exceedance(tmp_path, capsys):
    # the constant-field corrector sits exactly on the closed band edge: zero exceedance
    out = tmp_path / "z"
    code = main(["properties", "--out", str(out), "--set", "environment.process=constant",
                 "--tol-u", "0", "--set", "theta.count=5", "--set", "montecarlo.t=2",
                 "--set", "montecarlo.dt=0.01", "--set", "montecarlo.n_paths=160",
                 "--set", "pde.epsilons=0.5,0.25"])
    capsys.readouterr()
    recs = [json.loads(line) for line in (out / "properties.jsonl").read_text().splitlines()]
    band = [r for r in recs if r["check"] == "corrector.gradient_band"]
    assert band and all(r["exceedance"] == 0.0 for r in band)
    assert code == (EXIT_OK if all(r["passed"] for r in recs) else EXIT_CHECKS)


def test_mc_estimate_cli(tmp_path, capsys):
    out = tmp_path / "m"
    assert main(["mc", "estimate", "--out", str(out), "--policy", "ValleyTrap",
                 "--theta", "0"] + FAST) == EXIT_OK
    rec = json.loads((out / "mc_estimate.jsonl").read_text())
    assert rec["policy"]["variant"] == "ValleyTrap"
    capsys.readouterr()
