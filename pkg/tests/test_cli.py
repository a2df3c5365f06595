"""CLI surface: exit codes, config precedence, byte-identical replay."""

import json
import subprocess
import sys

import pytest

from tscp.cli import EXIT_ENGINE, EXIT_INPUT, EXIT_PASS, main, resolve_config


def run_cli(args, cwd):
    return subprocess.run(
        [sys.executable, "-m", "tscp.cli", *args],
        cwd=cwd, capture_output=True, text=True,
    )


def test_selfcheck_passes(tmp_path):
    rc = main(["selfcheck", "--seed", "42", "--out", str(tmp_path / "o")])
    assert rc == EXIT_PASS
    report = json.loads((tmp_path / "o" / "selfcheck.json").read_text())
    assert report["passed"] is True
    assert report["config"]["seed"] == 42


def test_duplicate_flag_rejected(tmp_path):
    proc = run_cli(["speed", "--lambda", "1", "--mu", "2", "--mu", "1.9"], tmp_path)
    assert proc.returncode == EXIT_INPUT
    assert "duplicate" in proc.stderr


def test_mu_below_lambda_is_input_error(tmp_path):
    rc = main(["breakpoints", "--lambda", "2", "--mu", "1", "--out", str(tmp_path / "o")])
    assert rc == EXIT_INPUT


def test_unknown_subcommand_rejected(tmp_path):
    proc = run_cli(["frobnicate"], tmp_path)
    assert proc.returncode == EXIT_INPUT


def test_unknown_flag_rejected(tmp_path):
    proc = run_cli(["selfcheck", "--frobnicate", "1"], tmp_path)
    assert proc.returncode == EXIT_INPUT


def test_config_file_and_flag_precedence(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"seed": 7, "mu": 3.0}))
    sub, cfg = resolve_config(["selfcheck", "--config", str(cfg_path)])
    assert sub == "selfcheck" and cfg["seed"] == 7 and cfg["mu"] == 3.0
    _, cfg2 = resolve_config(["selfcheck", "--config", str(cfg_path), "--seed", "9"])
    assert cfg2["seed"] == 9 and cfg2["mu"] == 3.0  # flag wins, file beats default


def test_unknown_config_key_rejected(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"nonsense": 1}))
    rc = main(["selfcheck", "--config", str(cfg_path)])
    assert rc == EXIT_INPUT


def test_workers_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("TSCP_WORKERS", "3")
    _, cfg = resolve_config(["selfcheck"])
    assert cfg["workers"] == 3
    _, cfg2 = resolve_config(["selfcheck", "--workers", "1"])
    assert cfg2["workers"] == 1  # explicit flag still wins


def test_replay_byte_identical(tmp_path):
    args = ["percolation", "--seed", "11", "--replicas", "20", "--n-max", "80",
            "--p", "0.85", "--p-tilde", "0.8"]
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert main([*args, "--out", str(a)]) == EXIT_PASS
    assert main([*args, "--out", str(b)]) == EXIT_PASS
    for name in ("percolation.json", "percolation.csv"):
        ja = (a / name).read_bytes().replace(str(a).encode(), b"OUT")
        jb = (b / name).read_bytes().replace(str(b).encode(), b"OUT")
        assert ja == jb


def test_simulate_writes_csv(tmp_path):
    rc = main([
        "simulate", "--seed", "5", "--replicas", "4", "--horizon", "20",
        "--grid-step", "10", "--out", str(tmp_path / "o"),
    ])
    assert rc == EXIT_PASS
    lines = (tmp_path / "o" / "simulate.csv").read_text().strip().splitlines()
    assert lines[0] == "replica,t,r,l,infected_count,died"
    assert len(lines) == 1 + 4 * 3  # header + 4 replicas x 3 sample times


def test_couplings_subcommand_small(tmp_path):
    rc = main([
        "couplings", "--seed", "3", "--replicas", "3", "--t-max", "15",
        "--grid-step", "5", "--k-cap", "10", "--out", str(tmp_path / "o"),
    ])
    assert rc == EXIT_PASS
    rep = json.loads((tmp_path / "o" / "couplings.json").read_text())
    assert rep["passed"] is True
    assert len(rep["results"]["verdicts"]) == 4


def test_breakpoints_subcommand_writes_expected_columns(tmp_path):
    rc = main([
        "breakpoints", "--seed", "8", "--replicas", "3", "--horizon", "200",
        "--survival-horizon", "50", "--out", str(tmp_path / "o"),
    ])
    assert rc == EXIT_PASS
    lines = (tmp_path / "o" / "breakpoints.csv").read_text().strip().splitlines()
    assert lines[0] == "replica,n,K_n,tau_Kn,X_n,Psi_n,M_nm1,censored"
    assert len(lines) > 1
