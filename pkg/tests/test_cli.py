from __future__ import annotations

import json

import pytest

from landau_lab.artifacts import digest
from landau_lab.cli import main


def run(*argv) -> int:
    return main([str(a) for a in argv])


def test_help_and_usage_errors(capsys):
    assert run("--help") == 0
    assert run() == 2
    assert run("bogus") == 2
    assert run("equilibrium-check", "--set", "run.dt=-1") == 2
    assert run("equilibrium-check", "--config", "/nonexistent.toml") == 2


def test_equilibrium_check_manifest_and_report(tmp_path, capsys):
    assert run("equilibrium-check", "--out", tmp_path) == 0
    man = json.loads((tmp_path / "manifest_equilibrium_check.json").read_text())
    assert man["subcommand"] == "equilibrium_check"
    assert man["breaches"] == []
    assert {a["path"] for a in man["artifacts"]} == {"equilibrium.json"}
    assert man["artifacts"][0]["sha256"] == digest(tmp_path / "equilibrium.json")
    assert man["config"]["run"]["seed"] == 20240517
    assert run("report", tmp_path) == 0
    first = (tmp_path / "report.json").read_bytes()
    text = (tmp_path / "report.txt").read_text()
    assert "equilibrium mass normalization error" in text
    assert run("report", tmp_path) == 0
    assert (tmp_path / "report.json").read_bytes() == first


def test_report_rejects_missing_or_tampered(tmp_path, capsys):
    assert run("report", tmp_path) == 2
    assert run("report", tmp_path / "nope") == 2
    assert run("equilibrium-check", "--out", tmp_path) == 0
    (tmp_path / "equilibrium.json").write_text("{}")
    assert run("report", tmp_path) == 2


def test_out_dir_from_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("LANDAU_LAB_OUT", str(tmp_path / "env"))
    assert run("equilibrium-check") == 0
    assert (tmp_path / "env" / "manifest_equilibrium_check.json").exists()


def test_kernel_decay_with_sample_file(tmp_path, capsys):
    samples = tmp_path / "s.csv"
    samples.write_text("t,x1,x2,x3\n1,0,0,0\n2,1,0,0\n4,0,2,0\n")
    assert run("kernel-decay", "--which", "glow-riesz", "--samples", samples, "--out", tmp_path) == 0
    rows = (tmp_path / "kernel_decay_glow-riesz_00.csv").read_text().splitlines()
    assert rows[0] == "t,x1,x2,x3,lhs,rhs,ratio"
    assert len(rows) == 4
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert run("kernel-decay", "--samples", bad, "--out", tmp_path) == 2


def test_kernel_trend_breach_exits_one(tmp_path, capsys):
    assert run("kernel-decay", "--which", "glow", "--j2", "2", "--out", tmp_path) == 1
    man = json.loads((tmp_path / "manifest_kernel_decay.json").read_text())
    assert any("trend" in b for b in man["breaches"])


def test_solve_linear_then_field_consumers(tmp_path, capsys):
    out = tmp_path / "lin"
    assert run("solve-linear", "--out", out, "--set", "run.T_horizon=20") == 0
    assert (out / "history" / "history.json").exists()
    assert (out / "fields.csv").exists()
    assert (out / "tracks").is_dir()
    summ = json.loads((out / "linear_summary.json").read_text())
    assert summ["zero_spacing"] == pytest.approx(3.14159, abs=0.05)
    assert run("characteristics-check", "--field", "linear-run", out, "--which", "a13",
               "--out", tmp_path / "char") == 0
    assert run("scatter", "--field", "linear-run", out, "--times", "1,2,4", "--out", tmp_path / "sc") in (0, 1)
    assert (tmp_path / "sc" / "scatter.csv").exists()
    assert run("characteristics-check", "--field", "linear-run", tmp_path / "nope", "--out", tmp_path) == 2
    assert run("characteristics-check", "--field", "linear-run", "--out", tmp_path) == 2


def test_scatter_zero_field(tmp_path, capsys):
    assert run("scatter", "--field", "zero", "--out", tmp_path) == 0
    rows = (tmp_path / "scatter.csv").read_text().splitlines()
    assert rows[0] == "t,sup_diff,fitted_exponent"
    assert all(r.split(",")[1] in ("0", "0.0") for r in rows[1:])


def test_numerical_failure_exit_code(tmp_path, capsys):
    # horizon too short for the requested scattering times is a usage error,
    # a field too strong for the Picard iteration is a numerical failure
    assert run("scatter", "--field", "zero", "--times", "5", "--out", tmp_path) == 0
    assert run("solve-nonlinear", "--out", tmp_path, "--set", "source.epsilon=50",
               "--set", "nonlinear.T_horizon=2", "--set", "nonlinear.max_outer=3",
               "--set", "nonlinear.cell_samples=20", "--set", "mc.samples=200") == 3


def test_lemmas_threads_are_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("lemmas", "--which", "a3", "--out", a) == 0
    assert run("lemmas", "--which", "a3", "--threads", "4", "--out", b) == 0
    for name in ("lemma_a3.csv", "lemmas_summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
