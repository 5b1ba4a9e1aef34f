import csv
import os
import subprocess
import sys

import pytest

from delayhomotopy import DelayedOCP, SmoothField, integrator_problem
from delayhomotopy.cli import main, trajectory_filename
from delayhomotopy.problem import PRESETS, register_preset


def _no_input(target):
    p = integrator_problem(target=target)
    return DelayedOCP(1, p.f0, p.f1, SmoothField.zero(1), p.history, p.M, p.T, p.target)


@pytest.fixture(autouse=True, scope="module")
def scratch_presets():
    register_preset("no_input_unreachable", lambda: _no_input(3.0))
    register_preset("no_input_at_rest", lambda: _no_input(0.0))
    yield
    del PRESETS["no_input_unreachable"], PRESETS["no_input_at_rest"]


def run(tmp_path, text, command="solve", *extra, name="run.cfg"):
    cfg = tmp_path / name
    cfg.write_text(text)
    return main([command, str(cfg), *extra])


def read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


PENDULUM = "problem = pendulum\ntau_target = 0.2\ndtau = 0.1\n"


def test_solve_writes_summary_and_trajectory(tmp_path):
    out = tmp_path / "out"
    assert run(tmp_path, PENDULUM + f"output_dir = {out}\n") == 0
    rows = read(out / "summary.csv")
    assert rows[0] == ["tau", "cost", "converged", "newton_iters", "p0_1", "p0_2"]
    assert [r[0] for r in rows[1:]] == ["0", "0.10000000000000001", "0.20000000000000001"]
    assert all(r[2] == "true" and float(r[1]) >= 0 for r in rows[1:])
    traj = read(out / trajectory_filename(0.2))
    assert traj[0] == ["t", "x1", "x2", "p1", "p2", "u"]
    assert len(traj) == 1 + 2001
    assert float(traj[-1][0]) == 2.0
    raw = (out / "summary.csv").read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")


def test_values_round_trip(tmp_path):
    assert run(tmp_path, PENDULUM, "solve", "--output-dir", str(tmp_path)) == 0
    for row in read(tmp_path / "summary.csv")[1:]:
        for cell in (row[1], row[4], row[5]):
            assert "%.17g" % float(cell) == cell


def test_output_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(tmp_path, PENDULUM, "solve", "--output-dir", str(a)) == 0
    assert run(tmp_path, PENDULUM, "solve", "--output-dir", str(b)) == 0
    names = sorted(os.listdir(a))
    assert names == sorted(os.listdir(b)) == ["summary.csv", "trajectory_tau0.2.csv"]
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_sweep_records_requested_delays(tmp_path):
    text = "problem = pendulum\nsweep = 0, 0.15, 0.3\ndtau = 0.1\n"
    assert run(tmp_path, text, "sweep", "--output-dir", str(tmp_path)) == 0
    rows = read(tmp_path / "summary.csv")
    assert [float(r[0]) for r in rows[1:]] == [0.0, 0.15, 0.3]
    for tau in (0.0, 0.15, 0.3):
        assert (tmp_path / trajectory_filename(tau)).exists()


def test_sweep_of_zero_is_nondelayed(tmp_path):
    assert run(tmp_path, "problem = pendulum\nsweep = 0\n", "sweep", "--output-dir",
               str(tmp_path)) == 0
    assert len(read(tmp_path / "summary.csv")) == 2
    assert (tmp_path / "trajectory_tau0.csv").exists()


def test_failed_run_exits_one_and_keeps_files(tmp_path):
    text = "problem = no_input_unreachable\ntau_target = 0.5\n"
    assert run(tmp_path, text, "solve", "--output-dir", str(tmp_path)) == 1
    assert read(tmp_path / "summary.csv") == [["tau", "cost", "converged", "newton_iters", "p0_1"]]


@pytest.mark.parametrize("text, command", [("tau_target = -1\n", "solve"),
                                           ("problem = pendulum\n", "sweep"),
                                           ("sweep = 2, 1\n", "sweep")])
def test_config_errors_exit_two(tmp_path, capsys, text, command):
    assert run(tmp_path, text, command) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert main(["solve", str(tmp_path / "absent.cfg")]) == 2
    assert capsys.readouterr().err


def test_unwritable_output_dir(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run(tmp_path, PENDULUM, "solve", "--output-dir", str(blocker / "sub")) == 2
    assert "error" in capsys.readouterr().err


def test_gramian_flags_missing_input(tmp_path):
    assert run(tmp_path, "problem = no_input_at_rest\n", "gramian", "--output-dir",
               str(tmp_path)) == 0
    rows = read(tmp_path / "gramian.csv")
    assert rows == [["tau", "lambda_min", "trace", "surjective"], ["0", "0", "0", "false"]]


def test_gramian_pendulum_sweep(tmp_path):
    text = "problem = pendulum\nsweep = 0, 0.2\ndtau = 0.1\n"
    assert run(tmp_path, text, "gramian", "--output-dir", str(tmp_path)) == 0
    rows = read(tmp_path / "gramian.csv")
    assert [r[0] for r in rows[1:]] == ["0", "0.20000000000000001"]
    assert all(r[3] == "true" and float(r[1]) > 0 for r in rows[1:])


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "delayhomotopy", "--help"], capture_output=True,
                          text=True)
    assert proc.returncode == 0 and "gramian" in proc.stdout


@pytest.mark.slow
def test_rendezvous_sweep_end_to_end(tmp_path):
    text = "problem = rendezvous\nsweep = 0, 2, 4\ndtau = 0.4\ncontinuation.refine_passes = 0\n"
    assert run(tmp_path, text, "sweep", "--output-dir", str(tmp_path)) == 0
    rows = read(tmp_path / "summary.csv")[1:]
    costs = {float(r[0]): float(r[1]) for r in rows}
    assert costs[0.0] == pytest.approx(6.09179e-7, rel=0.02)
    assert costs[2.0] == pytest.approx(6.05183e-7, rel=0.02)
    assert costs[4.0] == pytest.approx(8.68821e-7, rel=0.02)
    for tau in (0, 2, 4):
        assert (tmp_path / trajectory_filename(tau)).exists()
