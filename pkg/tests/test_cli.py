import io
import json

import pytest
import yaml

from hessbound.cli import DEFAULTS, defaults_for, main
from hessbound.geometry import load_field


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), out=out)
    return code, out.getvalue()


def test_dump_defaults_round_trips():
    code, text = run("--dump-defaults")
    assert code == 0
    assert yaml.safe_load(text) == DEFAULTS
    code, text = run("estimate", "--dump-defaults")
    doc = yaml.safe_load(text)
    assert doc["operator.n"] == 3 and doc["manufactured"] == "bubble"
    assert doc == defaults_for("estimate")


def test_symcheck_passes_and_prints_header():
    code, text = run("symcheck", "--n", "3", "--k", "2", "--samples", "100", "--seed", "7")
    assert code == 0
    assert text.startswith("# hessbound symcheck preset=schouten seed=7")
    assert "euler identity" in text and "FAIL" not in text


def test_solve_writes_outputs(tmp_path):
    code, text = run("solve", "--preset", "gauss_flat", "--N", "16", "--out", str(tmp_path))
    assert code == 0
    assert "status,converged" in text
    report = json.loads((tmp_path / "solve_report.json").read_text())
    assert report["status"] == "converged"
    assert (tmp_path / "solve_table.csv").read_text().startswith("# hessbound solve")
    u = load_field(tmp_path / "u.grid")
    assert u.manifold.N == 16


def test_solve_iteration_limit_exits_one():
    code, text = run("solve", "--preset", "gauss_flat", "--N", "16", "--max-iters", "1")
    assert code == 1
    assert "status,not converged" in text


def test_audit_failure_exits_one():
    # two-dimensional optics has a + n b = 0, so the strict sign condition fails
    code, text = run("audit", "--preset", "optics", "--N", "12", "--case", "T1b")
    assert code == 1
    assert "a + n b < -delta2" in text and "FAIL" in text


def test_audit_pass():
    code, text = run("audit", "--preset", "schouten", "--N", "16")
    assert code == 0 and "case=T1a" in text


@pytest.mark.parametrize(
    "argv",
    [
        ("solve", "--preset", "nope"),
        ("solve", "--chart", "sphere", "--L", "1.5", "--N", "8"),
        ("solve", "--mode", "fuzzy"),
    ],
)
def test_config_errors_exit_two(argv):
    code, _ = run(*argv)
    assert code == 2


def test_config_file_errors_name_the_line(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("chart.N: 16\nbogus.key: 3\n")
    assert run("solve", "--config", str(cfg))[0] == 2
    assert "line 2" in capsys.readouterr().err
    cfg.write_text("chart.N: sixteen\n")
    assert run("solve", "--config", str(cfg))[0] == 2
    assert "line 1" in capsys.readouterr().err


def test_config_file_and_flags(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("preset: gauss_flat\nchart.N: 12\n")
    code, text = run("solve", "--config", str(cfg), "--N", "16")
    assert code == 0
    assert "N=16 L=2.0" in text


def test_output_is_deterministic():
    argv = ("solve", "--preset", "schouten", "--N", "16", "--seed", "3")
    assert run(*argv) == run(*argv)
