import json
import subprocess
import sys

import pytest

import drmv.pipeline
from drmv import sample_data_path
from drmv.cli import main
from drmv.errors import NonConvergenceError
from drmv.markowitz import zero_multiplier_target
from drmv.moments import empirical_moments
from drmv.pipeline import PipelineReport, load_csv

SAMPLE = sample_data_path()
BASE = ["--returns", SAMPLE, "--rho", "0.01", "--mc-samples", "5000"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_solve_to_stdout(capsys):
    code, out, err = run(capsys, "solve", *BASE)
    assert code == 0 and err == ""
    rep = PipelineReport.from_json(out)
    assert rep.params.rho == 0.01
    assert rep.calibration.mc_samples == 5000


def test_solve_to_file_is_stable(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run(capsys, "solve", *BASE, "--out", str(a))[0] == 0
    assert run(capsys, "solve", *BASE, "--workers", "3", "--out", str(b))[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_calibrate(capsys):
    code, out, _ = run(capsys, "calibrate", *BASE, "--p", "inf")
    assert code == 0
    obj = json.loads(out)
    assert list(obj) == ["asset_labels", "params", "calibration", "markowitz"]
    assert obj["params"]["p"] == float("inf")
    assert obj["calibration"]["delta_star"] > 0


def test_overrides(capsys):
    code, out, _ = run(capsys, "solve", *BASE, "--delta", "0", "--alpha-bar", "-10")
    assert code == 0
    rep = PipelineReport.from_json(out)
    assert rep.params.delta == 0.0 and rep.params.alpha_bar == -10.0
    assert rep.calibration.upsilon_g is None


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"returns_path": SAMPLE, "rho": 0.02, "mc_samples": 5000,
                               "delta_override": 1e-4}))
    code, out, _ = run(capsys, "solve", "--config", str(cfg), "--rho", "0.01")
    assert code == 0
    rep = PipelineReport.from_json(out)
    assert rep.params.rho == 0.01 and rep.params.delta == 1e-4


def test_backtest(capsys):
    code, out, _ = run(capsys, "backtest", *BASE, "--delta", "1e-4", "--window", "100",
                       "--rebalance", "10")
    assert code == 0
    obj = json.loads(out)
    assert obj["rebalance_rows"] == [100, 110]
    assert len(obj["wealth"]) == 21 and obj["wealth"][0] == 1.0


@pytest.mark.parametrize("argv,fragment", [
    (["solve", "--returns", SAMPLE], "missing required config values: rho"),
    (["solve", "--returns", "/nonexistent.csv", "--rho", "0.01"], "[load]"),
    (["solve", *BASE, "--delta0", "2"], "[config]"),
    (["backtest", *BASE], "window"),
])
def test_input_errors_exit_two(capsys, argv, fragment):
    code, out, err = run(capsys, *argv)
    assert code == 2 and out == ""
    assert err.startswith("drmv: error:") and fragment in err


def test_parse_error_location(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("A,B\n0.01,0.02\n0.01,x\n")
    code, _, err = run(capsys, "solve", "--returns", str(path), "--rho", "0.01")
    assert code == 2 and "row 3, column 2" in err


@pytest.mark.parametrize("argv", [["solve", "--p", "0.5"], ["solve", "--rho", "abc"], ["frobnicate"], []])
def test_argparse_errors_exit_two(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2


def test_infeasible_exit_three(capsys):
    code, _, err = run(capsys, "solve", *BASE, "--delta", "0.5", "--alpha-bar", "10")
    assert code == 3 and "[solve]" in err


def test_degenerate_exit_four(capsys):
    rho0 = zero_multiplier_target(empirical_moments(load_csv(SAMPLE)))
    code, _, err = run(capsys, "solve", "--returns", SAMPLE, "--rho", repr(rho0))
    assert code == 4 and "[calibrate_delta]" in err


def test_nonconvergence_exit_five(capsys, monkeypatch):
    def stuck(moments, params, config=None):
        raise NonConvergenceError("iteration budget exhausted", residual=1.0)

    monkeypatch.setattr(drmv.pipeline, "solve_robust", stuck)
    code, _, err = run(capsys, "solve", *BASE)
    assert code == 5 and "[solve]" in err


def test_oracle_check(tmp_path, capsys):
    out = tmp_path / "oc.txt"
    code, _, _ = run(capsys, "oracle-check", "--instances", "20", "--no-cross-check", "--out", str(out))
    assert code == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 3 and all(line.startswith("PASS") for line in lines)


def test_oracle_check_failure_exit_one(capsys, monkeypatch):
    import drmv.oracle

    monkeypatch.setattr(drmv.oracle, "agreement_suite",
                        lambda *a: [("worst_case_mean", 1.0, 1e-4, False)])
    code, out, _ = run(capsys, "oracle-check")
    assert code == 1 and out.startswith("FAIL")


def test_console_module_entry():
    proc = subprocess.run([sys.executable, "-m", "drmv.cli", "solve", *BASE, "--delta", "1e-4"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["params"]["delta"] == 1e-4
