import argparse
from pathlib import Path

import pytest

from app.schemas import OptimalitySpec, PhaseSpec
from app.services.storage_service import load_scenario
import cli
from cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, apply_overrides, main

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
LINEAR = str(CONFIG_DIR / "linear_test.toml")


def _linear_text() -> str:
    return Path(LINEAR).read_text(encoding="utf-8")


def _optimality_copy(tmp_path: Path) -> str:
    text = _linear_text().replace(
        '[coupling]\nkind = "phase"\nvariable = "differential"\nindex = 0\n',
        '[coupling]\nkind = "optimality"\ncase = "b"\n',
    ).replace('name = "linear"', 'name = "linear_opt"')
    path = tmp_path / "linear_opt.toml"
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_index_exit_code_is_the_index(tmp_path):
    out = tmp_path / "phase"
    assert main(["index", "--config", LINEAR, "--m", "20", "--out", str(out)]) == 2
    assert (out / "index_report.txt").read_text(encoding="utf-8").splitlines()[0] == "index: 2"
    assert (out / "index.csv").exists()

    code = main([
        "index", "--config", LINEAR, "--m", "20", "--out", str(tmp_path / "opt"),
        "--coupling", "optimality", "--weights", "b",
    ])
    assert code == 1


def test_index_sweep_rows(tmp_path):
    out = tmp_path / "sweep"
    code = main(["index", "--config", LINEAR, "--m", "20", "--steps", "4", "--weights", "a", "--sweep", "2", "--out", str(out)])
    assert code == 2
    rows = (out / "index.csv").read_text(encoding="utf-8").splitlines()
    assert rows[0].startswith("t,coupling,m,n_bar,index")
    assert len(rows) == 1 + 3


def test_simulate_then_reconstruct(tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "--config", LINEAR, "--m", "20", "--steps", "5", "--out", str(out)]) == EXIT_OK
    for name in ("trajectory.csv", "frequency.csv", "diagnostics.csv", "frequency.gp", "meta.txt"):
        assert (out / name).exists(), name

    assert main(["reconstruct", str(out / "trajectory.csv"), "--refine", "4"]) == EXIT_OK
    reconstructed = (out / "reconstructed.csv").read_text(encoding="utf-8").splitlines()
    assert reconstructed[0] == "t,y[0],y[1],z[0]"
    assert len(reconstructed) == 1 + 5 * 4 + 1
    assert (out / "psi.csv").read_text(encoding="utf-8").startswith("t,psi,theta")


def test_meta_reproduces_the_run(tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    assert main(["simulate", "--config", LINEAR, "--m", "20", "--steps", "5", "--out", str(first)]) == EXIT_OK
    assert main(["simulate", "--config", str(first / "meta.txt"), "--out", str(second)]) == EXIT_OK
    assert (first / "trajectory.csv").read_bytes() == (second / "trajectory.csv").read_bytes()


def test_compare(tmp_path):
    out = tmp_path / "cmp"
    code = main([
        "compare", "--config", LINEAR, _optimality_copy(tmp_path),
        "--m", "20", "--steps", "5", "--out", str(out),
    ])
    assert code == EXIT_OK
    header = (out / "frequency_comparison.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == "t,t_normalised,nu_linear,nu_linear_opt,absdiff_linear_opt,reldiff_linear_opt"
    assert (out / "functional.csv").read_text(encoding="utf-8").startswith("t,t_normalised,J_linear,J_linear_opt")
    assert (out / "compare_summary.txt").read_text(encoding="utf-8").startswith("reference: linear")


def test_compare_rejects_different_grids(tmp_path, capsys):
    other = tmp_path / "linear_m30.toml"
    other.write_text(_linear_text().replace("m = 40", "m = 30"), encoding="utf-8")
    assert main(["compare", "--config", LINEAR, str(other), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert "❌ Error [postproc]" in capsys.readouterr().out


def test_configuration_errors(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "missing.toml")]) == EXIT_CONFIG
    assert "❌ Error [config]" in capsys.readouterr().out

    assert main(["simulate", "--config", LINEAR, "--m", "1", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_malformed_trajectory(tmp_path, capsys):
    path = tmp_path / "trajectory.csv"
    path.write_text("t,nu,y[0][0],z[0][0]\n0,1,0,0\nzero,1,0,0\n", encoding="utf-8")
    assert main(["reconstruct", str(path)]) == EXIT_DATA
    assert "line 3:" in capsys.readouterr().out

    path.write_text("t,nu,y[0][0],z[0][0]\n0,1,0,0\n", encoding="utf-8")
    assert main(["reconstruct", str(path)]) == EXIT_DATA


@pytest.mark.parametrize("argv", [["simulate"], ["bogus"], ["index", "--config", LINEAR, "--m", "many"]])
def test_usage_errors_exit_with_config_code(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == EXIT_CONFIG


def test_apply_overrides():
    scenario = load_scenario(LINEAR)
    args = argparse.Namespace(m=24, stencil="bdf1", steps=7, seed_mode=None, coupling=None, weights="c")
    resolved = apply_overrides(scenario, args)
    assert resolved.m == 24 and resolved.stencil == "bdf1" and resolved.integrator.steps == 7
    assert isinstance(resolved.coupling, OptimalitySpec) and resolved.coupling.case == "c"

    back = apply_overrides(resolved, argparse.Namespace(coupling="phase_algebraic"))
    assert isinstance(back.coupling, PhaseSpec)
    assert back.coupling.variable == "algebraic" and back.coupling.index == 0
    assert back.m == 24


def test_plain_value_errors_map_to_data_code(monkeypatch, capsys):
    def broken(args):
        raise ValueError("grid shapes (5, 2)/(5, 1) do not match (4, 2)/(4, 1)")

    monkeypatch.setitem(cli.COMMANDS, "reconstruct", broken)
    assert main(["reconstruct", "trajectory.csv"]) == EXIT_DATA
    assert "❌ Error [input]: grid shapes" in capsys.readouterr().out
