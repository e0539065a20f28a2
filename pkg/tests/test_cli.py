import hashlib
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from fuzzy_hinf.cli import atomic_write, main
from fuzzy_hinf.model import EXAMPLE1_PATH, model_to_dict
from fuzzy_hinf.sdpa import read_sdpa
from fuzzy_hinf.sdp import canonicalize
from fuzzy_hinf.synthesis import SynthesisSettings, build_problem

from conftest import scalar_model

SYNTH = ["--model", "builtin:example1", "--h", "0.5", "--rho", "0.2", "--omega", "2"]


@pytest.fixture(scope="module")
def filter_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "filter.json"
    code = main(["synth", *SYNTH, "--gamma", "0.25", "--theorem", "2",
                 "--delay-rate-term", "plain", "--out", str(path)])
    assert code == 0
    return path


@pytest.fixture
def scalar_file(tmp_path):
    path = tmp_path / "scalar.json"
    model = scalar_model(a=-2.0, a_tau=-0.3, b=1.0, c=1.0, d=0.2, h=0.5, rho=0.2)
    path.write_text(json.dumps(model_to_dict(model)))
    return path


def _sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


# --- synth ---------------------------------------------------------------------------


def test_synth_writes_filter_and_manifest(filter_file):
    data = json.loads(filter_file.read_text())
    assert data["gamma"] == 0.25 and len(data["A_hat"]) == 2
    man = json.loads(open(f"{filter_file}.manifest.json").read())
    assert man["command"] == "synth" and man["exit_code"] == 0
    assert man["outputs"][str(filter_file)] == _sha(filter_file)
    assert man["inputs"]["builtin:example1"] == _sha(EXAMPLE1_PATH)


def test_synth_published_level_feasible(tmp_path):
    code = main(["synth", *SYNTH, "--gamma", "0.17", "--theorem", "2", "--out", str(tmp_path / "f.json")])
    assert code == 0


def test_synth_below_minimum_is_infeasible(tmp_path, capsys):
    out = tmp_path / "f.json"
    code = main(["synth", *SYNTH, "--gamma", "0.05", "--theorem", "2", "--out", str(out)])
    assert code == 2 and not out.exists()
    assert "infeasible" in capsys.readouterr().out


def test_synth_missing_model(tmp_path, capsys):
    code = main(["synth", "--model", str(tmp_path / "nope.json"), "--gamma", "1"])
    assert code == 1
    assert "nope.json" in capsys.readouterr().err


def test_synth_invalid_model_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"n": 2}')
    assert main(["synth", "--model", str(bad), "--gamma", "1", "--out", str(tmp_path / "f")]) == 1
    assert "bad.json" in capsys.readouterr().err


def test_synth_is_reproducible(tmp_path, scalar_file):
    digests = []
    for k in range(2):
        out = tmp_path / f"f{k}.json"
        assert main(["synth", "--model", str(scalar_file), "--gamma", "0.5", "--theorem", "1",
                     "--out", str(out)]) == 0
        digests.append(_sha(out))
    assert digests[0] == digests[1]


# --- gamma-min -------------------------------------------------------------------------


def test_gamma_min_grid_table(tmp_path, scalar_file, capsys):
    table, log, outdir = tmp_path / "t.txt", tmp_path / "log.json", tmp_path / "filters"
    code = main(["gamma-min", "--model", str(scalar_file), "--h", "0.3,0.5", "--omega", "2,5",
                 "--theorem", "1", "--bracket", "0.01,2", "--table", str(table), "--log", str(log),
                 "--out-dir", str(outdir)])
    assert code == 0
    text = capsys.readouterr().out
    lines = text.strip().splitlines()
    assert len(lines) == 3 and lines[0].split()[-2:] == ["0.3", "0.5"]
    assert table.read_text() == text
    cells = json.loads(log.read_text())["cells"]
    assert len(cells) == 4 and all(c["gamma"] is not None for c in cells)
    assert len(list(outdir.glob("*.json"))) == 4
    man = json.loads(open(f"{table}.manifest.json").read())
    assert set(man["outputs"]) == {str(table), str(log), *(c["filter"] for c in cells)}


def test_gamma_min_bracket_failure_exit_code(tmp_path, capsys):
    path = tmp_path / "m.json"
    path.write_text(json.dumps(model_to_dict(scalar_model(a=-2.0, b=1.0, c=0.0, d=0.0))))
    code = main(["gamma-min", "--model", str(path), "--theorem", "1", "--bracket", "0.001,0.01"])
    assert code == 2
    assert "-" in capsys.readouterr().out.splitlines()[1]


# --- simulate ------------------------------------------------------------------------


def test_simulate_random_history_decays(tmp_path, filter_file):
    summary = tmp_path / "s.json"
    csv = tmp_path / "t.csv"
    code = main(["simulate", "--model", "builtin:example1", "--filter", str(filter_file),
                 "--disturbance", "zero", "--phi", "random", "--seed", "7",
                 "--summary", str(summary), "--csv", str(csv)])
    assert code == 0
    data = json.loads(summary.read_text())
    assert data["terminal_norm"] < 1e-3 and data["t_final"] == pytest.approx(30.0)
    assert csv.read_text().splitlines()[0] == "t,x1,x2,xh1,xh2,z1,zh1,e1,w1"


def test_simulate_gain_within_certificate(tmp_path, filter_file):
    summary = tmp_path / "s.json"
    code = main(["simulate", "--model", "builtin:example1", "--filter", str(filter_file),
                 "--disturbance", "decaying_sine", "--gain", "--summary", str(summary)])
    assert code == 0
    data = json.loads(summary.read_text())
    assert data["l2_gain_estimate"] <= data["certified_gamma"]
    assert data["gain_within_certificate"] is True


def test_simulate_zero_disturbance_gain_is_an_error(filter_file, capsys):
    code = main(["simulate", "--model", "builtin:example1", "--filter", str(filter_file),
                 "--disturbance", "zero", "--gain"])
    assert code == 1
    assert "zero disturbance energy" in capsys.readouterr().err


def test_simulate_bad_phi_length(filter_file, capsys):
    code = main(["simulate", "--model", "builtin:example1", "--filter", str(filter_file), "--phi", "1,2,3"])
    assert code == 1


# --- verify --------------------------------------------------------------------------


def test_verify_default_suite(tmp_path):
    report = tmp_path / "r.json"
    assert main(["verify", "--trials", "1000", "--seed", "1", "--report", str(report)]) == 0
    data = json.loads(report.read_text())
    assert data["passed"] and data["inequality"]["min_margin"] >= -1e-9


def test_verify_single_trial_one_line(capsys):
    assert main(["verify", "--trials", "1"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 1


def test_verify_corrupted_lambda_fails(capsys):
    assert main(["verify", "--trials", "5", "--corrupt-lambda"]) == 2
    assert "FAIL" in capsys.readouterr().out


# --- export-sdpa ---------------------------------------------------------------------


def test_export_sdpa_round_trip(tmp_path, ex1):
    out1, out2 = tmp_path / "t1.dat-s", tmp_path / "t2.dat-s"
    assert main(["export-sdpa", *SYNTH, "--gamma", "0.3", "--theorem", "1", "--out", str(out1)]) == 0
    assert main(["export-sdpa", *SYNTH, "--gamma", "0.3", "--theorem", "2", "--out", str(out2)]) == 0
    p1, p2 = read_sdpa(out1), read_sdpa(out2)
    assert p2.d > p1.d
    ref = canonicalize(build_problem(ex1, 0.3, SynthesisSettings(0.5, 0.2, 2.0, 1, "rho", "full", 1e-6, None)))
    x = np.random.default_rng(0).standard_normal(ref.d)
    for a, b in zip(ref.blocks, p1.blocks):
        Fa = a.F0 + (a.coeffs @ x).reshape(a.dim, a.dim)
        Fb = b.F0 + (b.coeffs @ x).reshape(b.dim, b.dim)
        assert np.max(np.abs(Fa - Fb)) < 1e-12


def test_export_sdpa_is_deterministic(tmp_path):
    outs = [tmp_path / f"e{k}.dat-s" for k in range(2)]
    for out in outs:
        assert main(["export-sdpa", *SYNTH, "--gamma", "0.3", "--theorem", "2", "--out", str(out)]) == 0
    assert outs[0].read_bytes() == outs[1].read_bytes()


def test_export_sdpa_bad_theorem_flag(tmp_path, capsys):
    assert main(["export-sdpa", *SYNTH, "--gamma", "0.3", "--theorem", "3", "--out", str(tmp_path / "x")]) == 1
    assert "invalid choice" in capsys.readouterr().err


# --- plumbing ------------------------------------------------------------------------


def test_atomic_write_leaves_no_temporaries(tmp_path):
    digest = atomic_write(tmp_path / "a.txt", "hello\n")
    assert digest == hashlib.sha256(b"hello\n").hexdigest()
    assert [p.name for p in tmp_path.iterdir()] == ["a.txt"]


def test_console_entry_point_and_log_env(tmp_path):
    env = dict(os.environ, FUZZY_HINF_LOG="DEBUG")
    proc = subprocess.run(
        [sys.executable, "-m", "fuzzy_hinf.cli", "verify", "--trials", "1"],
        capture_output=True, text=True, env=env, cwd=tmp_path,
    )
    assert proc.returncode == 0
    assert "DEBUG" in proc.stderr


def test_missing_subcommand_exit_code():
    assert main([]) == 1
    assert main(["--version"]) == 0
