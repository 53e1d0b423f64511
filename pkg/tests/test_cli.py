import os

import pytest

from bistatic_isac.cli import main


@pytest.fixture
def fast_config(tmp_path):
    path = tmp_path / "scenario.cfg"
    path.write_text("""
        grid.n_sc = 16
        grid.n_cp = 4
        sensing.gamma_sens = 400
        scenario.delta_g_db = 16
        optimizer.max_iterations = 5
        run.runs = 1
        run.workers = 1
        run.seed = 3
    """)
    return str(path)


def test_validate_channel_passes(capsys):
    assert main(["validate-channel"]) == 0
    out = capsys.readouterr().out
    assert "validated" in out


def test_simulate_writes_rows(fast_config, tmp_path, capsys):
    out_dir = str(tmp_path / "out")
    code = main(["--config", fast_config, "--out", out_dir,
                 "--schemes", "noma-cf", "simulate"])
    assert code == 0
    assert os.path.exists(os.path.join(out_dir, "simulate.csv"))
    lines = open(os.path.join(out_dir, "simulate.csv")).read().splitlines()
    assert lines[0].startswith("scheme,delta_g_db")
    assert len(lines) == 2

    out = capsys.readouterr().out
    assert "noma-cf" in out


def test_bad_config_returns_error(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("grid.bogus = 1\n")
    code = main(["--config", str(bad), "simulate"])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_convergence_emits_csv(fast_config, tmp_path):
    out_dir = str(tmp_path / "conv")
    code = main(["--config", fast_config, "--out", out_dir, "convergence"])
    assert code == 0
    lines = open(os.path.join(out_dir, "convergence.csv")).read().splitlines()
    assert lines[0] == "iteration,profile,mean_se"
    assert any(line.startswith("1,static,") for line in lines)
