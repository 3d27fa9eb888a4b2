import subprocess
import sys

import numpy as np
import pytest

from quadsim.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, SEED_ENV, main, resolve_seed
from quadsim.estimation import BenchSample, YawSteadyState, moi_from_pendulum, write_bench_csv, write_yaw_csv
from quadsim.harness import TELEMETRY_HEADER, read_telemetry
from quadsim.model import REFERENCE_AIRFRAME, PropellerModel
from quadsim.config import parse_keyvalue

SHORT_HOVER = "duration = 0.2\nintegrator = rk4\nalpha_ema_p = 1\nalpha_ema_q = 1\nalpha_ema_r = 1\n"


def test_timing_output(capsys):
    assert main(["timing", "--t0", "0.0222222222", "--t1", "0.002068", "--t2", "0.000026"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "2070.239 μs, 483 Hz"


def test_simulate_shipped_hover(tmp_path, capsys):
    out = tmp_path / "hover.csv"
    assert main(["simulate", "--scenario", "hover", "--out", str(out)]) == EXIT_OK
    rows = read_telemetry(out)
    assert len(rows) == round(5 * 450)
    assert out.read_text().splitlines()[0] == ",".join(TELEMETRY_HEADER)


def test_simulate_plot_writes_figures(tmp_path):
    scen = tmp_path / "s.txt"
    scen.write_text(SHORT_HOVER + "[schedule]\n0, 0.1, 1, 0, 0\n")
    out = tmp_path / "run.csv"
    assert main(["simulate", "--scenario", str(scen), "--out", str(out), "--plot"]) == EXIT_OK
    for suffix in ("_states.png", "_actuators.png"):
        png = tmp_path / f"run{suffix}"
        assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_simulate_to_stdout(tmp_path, capsys):
    scen = tmp_path / "s.txt"
    scen.write_text(SHORT_HOVER)
    assert main(["simulate", "--scenario", str(scen)]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[0] == ",".join(TELEMETRY_HEADER) and len(out) == 1 + 90


def test_plot_needs_out(tmp_path):
    scen = tmp_path / "s.txt"
    scen.write_text(SHORT_HOVER)
    assert main(["simulate", "--scenario", str(scen), "--plot"]) == EXIT_INVALID


@pytest.mark.parametrize("argv", [
    ["simulate", "--bogus"],
    [],
    ["timing", "--t0", "x", "--t1", "1", "--t2", "1"],
    ["tune", "--axis", "yaw"],
    ["simulate", "--scenario", "no_such_scenario"],
    ["moi", "--mass", "1", "--pivot", "0.3"],
])
def test_invalid_usage_exits_1(argv, capsys):
    assert main(argv) == EXIT_INVALID
    assert capsys.readouterr().err


def test_bad_scenario_file_exits_1(tmp_path, capsys):
    scen = tmp_path / "s.txt"
    scen.write_text("duration = 1\n[schedule]\n1, 0, 0, 0, 0\n0, 0, 0, 0, 0\n")
    assert main(["simulate", "--scenario", str(scen)]) == EXIT_INVALID
    assert "s.txt:4" in capsys.readouterr().err


def test_divergence_exits_2_with_partial_csv(tmp_path, capsys):
    scen = tmp_path / "d.txt"
    scen.write_text(SHORT_HOVER.replace("0.2", "2") + "max_angle_deg = 1\n[schedule]\n0, 0, 5, 0, 0\n")
    out = tmp_path / "d.csv"
    assert main(["simulate", "--scenario", str(scen), "--out", str(out)]) == EXIT_RUNTIME
    assert "attitude" in capsys.readouterr().err
    assert 0 < len(read_telemetry(out)) < 900


def test_seed_precedence(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    assert resolve_seed(None, 3) == 3
    monkeypatch.setenv(SEED_ENV, "9")
    assert resolve_seed(None, 3) == 9
    assert resolve_seed(4, 3) == 4
    monkeypatch.setenv(SEED_ENV, "nine")
    with pytest.raises(ValueError):
        resolve_seed(None, 3)


def test_seed_env_changes_noisy_output(tmp_path, monkeypatch):
    scen = tmp_path / "n.txt"
    scen.write_text("duration = 0.2\nintegrator = rk4\ngyro_sigma = 0.01\nseed = 1\n")
    paths = {}
    for label, env in (("file", None), ("env", "2"), ("env_again", "2")):
        if env is None:
            monkeypatch.delenv(SEED_ENV, raising=False)
        else:
            monkeypatch.setenv(SEED_ENV, env)
        paths[label] = tmp_path / f"{label}.csv"
        assert main(["simulate", "--scenario", str(scen), "--out", str(paths[label])]) == EXIT_OK
    assert paths["env"].read_bytes() == paths["env_again"].read_bytes()
    assert paths["env"].read_bytes() != paths["file"].read_bytes()
    out = tmp_path / "cli.csv"
    assert main(["simulate", "--scenario", str(scen), "--seed", "1", "--out", str(out)]) == EXIT_OK
    assert out.read_bytes() == paths["file"].read_bytes()


def test_fit_drag_matches_params(tmp_path, capsys):
    data = tmp_path / "yaw.csv"
    r = np.array([6.0, 11.0, 15.5, 19.0])
    write_yaw_csv(data, [YawSteadyState(REFERENCE_AIRFRAME.gamma1 * x * x + REFERENCE_AIRFRAME.gamma2, x) for x in r])
    plot = tmp_path / "fit.png"
    assert main(["fit-drag", "--data", str(data), "--params", "builtin-missing.txt"]) == EXIT_INVALID
    capsys.readouterr()
    assert main(["fit-drag", "--data", str(data), "--plot", str(plot)]) == EXIT_OK
    values, _ = parse_keyvalue(capsys.readouterr().out)
    assert float(values["gamma1"]) == pytest.approx(REFERENCE_AIRFRAME.gamma1, rel=1e-9)
    assert float(values["gamma2"]) == pytest.approx(REFERENCE_AIRFRAME.gamma2, rel=1e-9)
    assert plot.exists()


def test_drag_sweep_then_fit_end_to_end(tmp_path, capsys):
    data = tmp_path / "sweep.csv"
    assert main(["drag-sweep", "--thrusts", "1.5", "3", "4.5", "6", "--out", str(data)]) == EXIT_OK
    capsys.readouterr()
    assert main(["fit-drag", "--data", str(data)]) == EXIT_OK
    values, _ = parse_keyvalue(capsys.readouterr().out)
    assert float(values["gamma1"]) == pytest.approx(REFERENCE_AIRFRAME.gamma1, rel=1e-3)
    assert float(values["gamma2"]) == pytest.approx(REFERENCE_AIRFRAME.gamma2, rel=1e-3)


def test_fit_propeller_output_loads(tmp_path, capsys):
    true = PropellerModel(h1=2e-4, h2=30.0, c1=1e-5, g1=0.016, g2=0.002)
    samples = []
    for p in np.linspace(40, 250, 10):
        f = true.h1 * (p - true.h2) ** 2
        w = (f / true.c1) ** 0.5
        samples.append(BenchSample(P=p, f=f, w=w, V=12.0, I=(true.g1 * f + true.g2) * w / 12.0))
    data = tmp_path / "bench.csv"
    write_bench_csv(data, samples)
    assert main(["fit-propeller", "--data", str(data)]) == EXIT_OK
    values, _ = parse_keyvalue(capsys.readouterr().out)
    for name in ("h1", "h2", "c1", "g1", "g2"):
        assert float(values[name]) == pytest.approx(getattr(true, name), rel=1e-9)


def test_moi_period_and_swings(tmp_path, capsys):
    assert main(["moi", "--mass", "1.645", "--pivot", "0.3", "--period", "1.2035"]) == EXIT_OK
    values, _ = parse_keyvalue(capsys.readouterr().out)
    expected = moi_from_pendulum(1.645, 9.80665, 0.3, 1.2035)
    assert float(values["J_com"]) == pytest.approx(expected[1], rel=1e-12)
    swings = tmp_path / "swings.csv"
    swings.write_text("trial,t\n" + "".join(f"1,{1.2035 * k}\n" for k in range(11)))
    assert main(["moi", "--mass", "1.645", "--pivot", "0.3", "--swings", str(swings)]) == EXIT_OK
    values, _ = parse_keyvalue(capsys.readouterr().out)
    assert float(values["J_com"]) == pytest.approx(expected[1], rel=1e-9)


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "quadsim", "timing", "--t0", "0.0222222222", "--t1",
                           "0.002068", "--t2", "0.000026"], capture_output=True, text=True)
    assert proc.returncode == 0 and "483 Hz" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "quadsim", "--nope"], capture_output=True, text=True)
    assert proc.returncode == 1 and "usage" in proc.stderr
