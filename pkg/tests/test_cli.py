import json
import subprocess
import sys

import numpy as np
import pytest

from chern_calabi import cli
from chern_calabi.flow import CSV_COLUMNS, FlowConfig, initial_state
from chern_calabi.lattice import Grid
from chern_calabi.metricgen import MetricRecipe

DEMO = """
n = 1
N = 32
kind = conformal
amplitude = 0.1
mode = 1
integrator = imex
dt = 1e-3
max_steps = 3000
scalar_curv_tol = 1e-6
"""


def _write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text + f"\noutput_dir = {tmp_path / 'out'}\n")
    return p


@pytest.mark.parametrize("bad, message", [
    ("nonsense = 1", "unknown key"),
    ("dt = 1e-3\ndt = 2e-3", "duplicate key"),
    ("dt = fast", "bad value"),
    ("just words", "expected key = value"),
    ("integrator = euler", "integrator"),
    ("n = 1\nkind = random_pluriclosed", "needs n = 2"),
    ("n = 2\nN = 12\nkind = conformal", "needs n = 1"),
    ("N = 7", ""),
    ("n = 2\nN = 12\nintegrator = rk4\ndt = 1e-3", "stability limit"),
    ("checkpoint_every = 0", "checkpoint_every"),
])
def test_config_errors_write_nothing(tmp_path, capsys, bad, message):
    cfg = _write(tmp_path, bad)
    assert cli.main(["run", str(cfg)]) == cli.EXIT_CONFIG
    assert message in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_comments_and_blank_lines():
    cfg = cli.parse_config_text("# header\n\nn = 2  # complex dimension\nN = 12\n")
    assert cfg.grid == Grid(2, 12)
    assert cfg.flow == FlowConfig()


def test_flat_run_single_record(tmp_path):
    cfg = _write(tmp_path, "n = 2\nN = 12\nkind = flat\n")
    assert cli.main(["run", str(cfg)]) == cli.EXIT_OK
    rows = cli.read_csv(tmp_path / "out" / "trajectory.csv")
    assert len(rows) == 1
    assert rows[0]["sup_r"] == 0.0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["stop_reason"] == "scalar_curv_tol" and summary["exit_code"] == 0


def test_demo_converges_with_monotone_energy(tmp_path):
    cfg = _write(tmp_path, DEMO)
    assert cli.main(["run", str(cfg)]) == cli.EXIT_OK
    rows = cli.read_csv(tmp_path / "out" / "trajectory.csv")
    assert list(rows[0]) == list(CSV_COLUMNS)
    mab = [r["mab"] for r in rows]
    assert all(b <= a + 1e-10 for a, b in zip(mab, mab[1:]))
    assert rows[-1]["sup_r"] < 1e-6
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert summary["det_variation"] < 1e-5


@pytest.mark.parametrize("extra, code", [("t_max = 0.005", cli.EXIT_T_MAX),
                                         ("max_steps = 3\nt_max = 1", cli.EXIT_MAX_STEPS),
                                         ("min_eigen_guard = 0.999", cli.EXIT_DEGENERATE)])
def test_exit_codes(tmp_path, extra, code):
    text = DEMO.replace("max_steps = 3000\n", "") + extra
    assert cli.main(["run", str(_write(tmp_path, text))]) == code
    assert (tmp_path / "out" / "summary.json").exists()


def test_checkpoint_round_trip_is_bit_identical(tmp_path):
    state = initial_state(MetricRecipe("random_pluriclosed", seed=3, amplitude=0.05, max_mode=2), Grid(2, 12))
    state = state.__class__(0.125, np.random.default_rng(0).standard_normal(state.phi.shape) * 1e-3,
                            state.bg, 17, 3.5e-9)
    path = tmp_path / "a.ckpt"
    cli.write_checkpoint(path, state, FlowConfig(dt=1e-5), MetricRecipe("flat"), 3)
    ck = cli.read_checkpoint(path)
    assert np.array_equal(ck.phi, state.phi)
    assert np.array_equal(ck.omega0, state.bg.omega0.g)
    back = ck.state()
    assert (back.t, back.step_index, back.renorm_correction) == (0.125, 17, 3.5e-9)
    path2 = tmp_path / "b.ckpt"
    cli.write_checkpoint(path2, back, FlowConfig(dt=1e-5), MetricRecipe("flat"), 3)
    assert path.read_bytes() == path2.read_bytes()


def _fixture(tmp_path):
    cfg = _write(tmp_path, "n = 1\nN = 16\nkind = conformal\namplitude = 0.1\nmode = 1\n", "gen.cfg")
    assert cli.main(["gen", str(cfg)]) == cli.EXIT_OK
    return tmp_path / "out" / "fixture.ckpt"


def test_gen_rejects_flow_keys(tmp_path):
    cfg = _write(tmp_path, "n = 1\ndt = 1e-3\n", "gen.cfg")
    assert cli.main(["gen", str(cfg)]) == cli.EXIT_CONFIG


@pytest.mark.parametrize("damage, message", [
    (lambda b: b[:-5], "body has"),
    (lambda b: b.replace(b"version=1", b"version=9"), "version"),
    (lambda b: b.replace(b"chern-calabi-checkpoint", b"something-else-entirely"), "not a checkpoint"),
    (lambda b: b[:20], "header"),
])
def test_damaged_checkpoints(tmp_path, damage, message):
    path = _fixture(tmp_path)
    path.write_bytes(damage(path.read_bytes()))
    with pytest.raises(cli.CheckpointError, match=message):
        cli.read_checkpoint(path)
    cfg = tmp_path / "resume.cfg"
    cfg.write_text(f"n = 1\nN = 16\nresume = {path}\noutput_dir = {tmp_path / 'r'}\n")
    assert cli.main(["run", str(cfg)]) == cli.EXIT_CHECKPOINT


def test_non_finite_checkpoint(tmp_path):
    path = _fixture(tmp_path)
    data = bytearray(path.read_bytes())
    start = data.find(b"end_header\n") + len(b"end_header\n")
    data[start:start + 8] = np.array([np.nan], dtype="<f8").tobytes()
    path.write_bytes(bytes(data))
    with pytest.raises(cli.CheckpointError, match="non-finite"):
        cli.read_checkpoint(path)


def test_resume_reproduces_uninterrupted_run(tmp_path):
    base = DEMO.replace("max_steps = 3000", "")
    whole = tmp_path / "whole.cfg"
    whole.write_text(base + f"max_steps = 100\noutput_dir = {tmp_path / 'whole'}\n")
    first = tmp_path / "first.cfg"
    first.write_text(base + f"max_steps = 50\ncheckpoints = true\noutput_dir = {tmp_path / 'first'}\n")
    assert cli.main(["run", str(whole)]) == cli.EXIT_MAX_STEPS
    assert cli.main(["run", str(first)]) == cli.EXIT_MAX_STEPS
    second = tmp_path / "second.cfg"
    second.write_text(base + f"max_steps = 100\nresume = {tmp_path / 'first' / 'checkpoint_final.ckpt'}\n"
                             f"output_dir = {tmp_path / 'second'}\n")
    assert cli.main(["run", str(second)]) == cli.EXIT_MAX_STEPS
    a = (tmp_path / "whole" / "trajectory.csv").read_text().splitlines()
    b = (tmp_path / "first" / "trajectory.csv").read_text().splitlines()
    c = (tmp_path / "second" / "trajectory.csv").read_text().splitlines()
    assert a[-1] == c[-1]
    assert a[:52] + c[2:] == a  # record 50 appears in both halves
    assert b[-1] == c[1]


def test_output_dir_environment_override(tmp_path, monkeypatch):
    cfg = _write(tmp_path, "n = 2\nN = 12\nkind = flat\n")
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "elsewhere"))
    assert cli.main(["run", str(cfg)]) == cli.EXIT_OK
    assert (tmp_path / "elsewhere" / "trajectory.csv").exists()
    assert not (tmp_path / "out").exists()


def test_verify_and_controls(tmp_path, capsys):
    common = "n = 2\nN = 12\nkind = random_pluriclosed\namplitude = 0.1\nmax_mode = 2\nseeds = 2\n"
    assert cli.main(["verify", str(_write(tmp_path, common))]) == cli.EXIT_OK
    text = (tmp_path / "out" / "identity_report.txt").read_text()
    assert text.count("report fingerprint=") == 2
    assert "status=fail" not in text
    assert cli.main(["verify", str(_write(tmp_path, common + "control_mode = true\n", "c.cfg"))]) == cli.EXIT_OK
    assert "controls behaved" in capsys.readouterr().out


def test_verify_control_mode_rejects_n1(tmp_path):
    assert cli.main(["verify", str(_write(tmp_path, "n = 1\ncontrol_mode = true\n"))]) == cli.EXIT_CONFIG


def test_console_entry_point(tmp_path):
    cfg = _write(tmp_path, "n = 2\nN = 12\nkind = flat\n")
    proc = subprocess.run([sys.executable, "-m", "chern_calabi.cli", "run", str(cfg)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "stop_reason=scalar_curv_tol" in proc.stdout
