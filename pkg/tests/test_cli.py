import logging
from pathlib import Path

import pytest

from fairmarkets.experiments.cli import main

SCENARIOS = Path(__file__).parent.parent / "scenarios"


def test_solve_writes_long_csv(tmp_path, capsys):
    assert main(["solve", "--scenario", str(SCENARIOS / "table1_pbp.yaml"), "--out", str(tmp_path)]) == 0
    assert "max KKT residual" in capsys.readouterr().out
    lines = (tmp_path / "solve.csv").read_text().splitlines()
    assert lines[0] == "quantity,buyer,item,value"
    assert "price,,0,1.5" in lines


def test_intervene_table4_raw(tmp_path, capsys):
    assert main(["intervene", "--scenario", str(SCENARIOS / "table4_raw.yaml"), "--format", "csv",
                 "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("quantity,buyer,item,value") and "lambda[parity_C]" in out
    x = {tuple(r.split(",")[1:3]): float(r.split(",")[3]) for r in out.splitlines() if r.startswith("x,")}
    assert x[("0", "0")] == pytest.approx(0.5, abs=1e-6) and x[("1", "0")] == pytest.approx(0.5, abs=1e-6)


def test_intervene_slater_text(capsys):
    assert main(["intervene", "--scenario", str(SCENARIOS / "table6_aef.yaml")]) == 0
    assert "Slater margin: 0.5" in capsys.readouterr().out


def test_audit(capsys):
    assert main(["audit", "--scenario", str(SCENARIOS / "table1_pbp.yaml")]) == 0
    out = capsys.readouterr().out
    assert "delta u target" in out and "exposure" in out


def test_opic_outputs(tmp_path):
    assert main(["opic", "--scenario", str(SCENARIOS / "table6_aef.yaml"), "--rounds", "15",
                 "--out", str(tmp_path)]) == 0
    assert len((tmp_path / "opic_trace.csv").read_text().splitlines()) > 15
    assert (tmp_path / "opic_violation.svg").read_text().startswith("<svg")


def test_repro_exit_zero(tmp_path, capsys):
    assert main(["repro", "--out", str(tmp_path)]) == 0
    assert "checks passed" in capsys.readouterr().out
    assert (tmp_path / "repro.csv").exists()


def test_randexp_and_chart(tmp_path):
    assert main(["randexp", "--family", "pip", "--markets", "2", "--rounds", "5", "--out", str(tmp_path)]) == 0
    for name in ("rows_pip.csv", "curve_pip.csv", "violation.svg", "welfare.svg"):
        assert (tmp_path / name).exists(), name
    assert main(["chart", "--input", str(tmp_path / "curve_pip.csv"), "--name", "again.svg",
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "again.svg").exists()


@pytest.mark.parametrize("argv", [
    ["solve"],
    ["solve", "--scenario", "does/not/exist.yaml"],
    ["randexp", "--markets", "0"],
    ["chart"],
])
def test_bad_input_exit_two(argv, capsys):
    assert main(argv) == 2
    assert "error" in capsys.readouterr().err.lower()


def test_bad_yaml_exit_two(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("market:\n  budgets: [1\n")
    assert main(["solve", "--scenario", str(p)]) == 2


def test_infeasible_floor_exit_two(tmp_path):
    p = tmp_path / "floor.yaml"
    p.write_text("market: {budgets: [1, 1], valuations: [[1, 1], [1, 1]]}\n"
                 "constraints:\n  - {family: aef, buyers: [0], items: [0], floor: 1.5}\n")
    assert main(["intervene", "--scenario", str(p)]) == 2


def test_duplicate_support_warning(tmp_path, caplog):
    p = tmp_path / "dup.yaml"
    p.write_text("market: {budgets: [1, 1], valuations: [[2, 1], [1, 2]]}\n"
                 "constraints:\n"
                 "  - {family: aef, buyers: [0], items: [0], floor: 0.2}\n"
                 "  - {family: aef, buyers: [0], items: [0], floor: 0.3}\n")
    with caplog.at_level(logging.WARNING, logger="fairmarkets"):
        assert main(["intervene", "--scenario", str(p)]) == 0
    assert "identical support" in caplog.text
