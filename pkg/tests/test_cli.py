import subprocess
import sys

import pytest

from blockapg.cli import main
from blockapg.solvers import TraceRecord, read_trace, write_trace


@pytest.fixture
def toml_config(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text("""
name = "tiny"
budget = 25

[problem]
m = 30
n = 60
blocks = 3
density = 0.3

[regularizer]
type = "l1"
lambda = 0.5

[reference]
budget = 2000

[[solver]]
name = "slow"
algorithm = "apg"
step = "full-lipschitz"

[[solver]]
name = "fast"
algorithm = "bcoapgnc+"
rule = "gs-r"
step = "lipschitz-block"
""")
    return path


def test_bench_and_compare(toml_config, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["bench", "--config", str(toml_config), "--out", str(out)]) == 0
    assert (out / "summary.csv").exists()
    traces = [str(out / "slow.csv"), str(out / "fast.csv")]
    assert main(["compare", *traces]) == 0
    assert "winner" in capsys.readouterr().out
    assert main(["compare", *traces, "--assert-winner", "fast", "--at", "20"]) == 0
    assert main(["compare", *traces, "--assert-winner", "slow", "--at", "20"]) == 3
    assert main(["compare", *traces, "--assert-winner", "nobody"]) == 2


def test_budget_flag_overrides_config(toml_config, tmp_path):
    out = tmp_path / "run"
    assert main(["bench", "--config", str(toml_config), "--budget", "2", "--out", str(out)]) == 0
    assert read_trace(out / "slow.csv")[-1].pass_ == 2


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[regularizer]\ntype = 'l3'\nlambda = 1\n[[solver]]\nalgorithm = 'apg'\n")
    assert main(["bench", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["bench", "--config", str(tmp_path / "missing.toml")]) == 2


def test_unknown_preset_is_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["bench", "--preset", "ridge"])
    assert info.value.code == 2


def test_compare_mismatched_traces(tmp_path):
    write_trace(tmp_path / "a.csv", [TraceRecord(0, 0, None, 1.0, None, None)])
    assert main(["compare", str(tmp_path / "a.csv")]) == 2


def test_generate_then_solve(tmp_path, capsys):
    assert main(["generate", "--preset", "capped-l1", "--scale", "0.01", "--out", str(tmp_path)]) == 0
    meta = tmp_path / "instance.json"
    assert meta.exists() and (tmp_path / "instance.mtx").exists()
    trace = tmp_path / "t.csv"
    assert main(["solve", "--instance", str(meta), "--algorithm", "bpl", "--rule", "cyclic",
                 "--budget", "4", "--out", str(trace)]) == 0
    assert len(read_trace(trace)) == 1 + 4 * 10
    assert "bpl(cyclic)" in capsys.readouterr().out


def test_solve_rejects_gs_s_with_scad(tmp_path):
    assert main(["solve", "--preset", "scad", "--scale", "0.01", "--rule", "gs-s", "--budget", "1"]) == 2


def test_solve_rejects_bad_beta(tmp_path):
    assert main(["generate", "--preset", "lasso", "--scale", "0.01", "--out", str(tmp_path)]) == 0
    assert main(["solve", "--instance", str(tmp_path / "instance.json"), "--beta", "1.5"]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "blockapg", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("generate", "solve", "bench", "compare"):
        assert cmd in proc.stdout
