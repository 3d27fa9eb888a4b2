import dataclasses
import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import shipped_run
from quadsim.config import ConfigError
from quadsim.control import SIMULATION_GAINS, ControllerGains
from quadsim.estimation import fit_drag_coefficients
from quadsim.harness import (
    TELEMETRY_HEADER,
    DivergenceError,
    DivergenceLimits,
    ScenarioSpec,
    ScheduleRow,
    drag_sweep,
    dump_scenario,
    parse_scenario,
    read_telemetry,
    run_scenario,
    step_metrics,
    steady_yaw_state,
    write_telemetry,
    yaw_spin_spec,
)
from quadsim.model import State


def csv_text(records):
    buf = io.StringIO()
    write_telemetry(buf, records)
    return buf.getvalue()


def test_hover_holds_level(params, prop):
    spec, result = shipped_run("hover")
    assert result.ticks == round(spec.duration * spec.controller_hz)
    # quantized commands leave a small thrust mismatch for the altitude loop to absorb
    assert np.max(np.abs(result.column("z"))) < 0.01
    for name in ("phi", "theta", "psi"):
        assert np.max(np.abs(result.column(name))) < 1e-12
    assert all(not steps for steps in result.summary.values())


def test_altitude_step_metrics():
    _, result = shipped_run("altitude_step")
    up, down = result.summary["z"]
    for m in (up, down):
        assert m.settling_time is not None and m.settling_time <= 3.0
        assert m.oscillations <= 1
        assert m.steady_state_error < 0.01
    assert up.target == 2.0 and down.target == 0.0


def test_empty_schedule_means_zero_references():
    spec = ScenarioSpec(duration=1.0)
    r = spec.references_at(0.7)
    assert (r.z, r.phi, r.theta, r.psi) == (0.0, 0.0, 0.0, 0.0)


def test_references_follow_schedule():
    spec = ScenarioSpec(duration=2.0, schedule=(ScheduleRow(0.5, 1.0, 5.0), ScheduleRow(1.0, 0.0)))
    assert spec.references_at(0.49).z == 0.0
    assert spec.references_at(0.5).phi == pytest.approx(math.radians(5.0))
    assert spec.references_at(1.5).phi == 0.0


def test_scenario_round_trip():
    spec = ScenarioSpec(duration=3.0, seed=11, integrator="rk4", schedule=(ScheduleRow(0.0, 0.0),
                        ScheduleRow(0.25, 1.5, -3.0, 2.0, 45.0)), initial=State(phi=0.1, z=0.3),
                        altitude_sigma=0.01, bearing=True, propellers=(True, False, True, False),
                        open_loop_thrust=2.0, limits=DivergenceLimits(60.0, 10.0, 20.0), alpha_ema_q=0.5)
    assert parse_scenario(dump_scenario(spec, header="round trip")) == spec


def test_scenario_decreasing_time_names_line():
    text = "duration = 2\n[schedule]\n0, 0, 0, 0, 0\n1, 0, 5, 0, 0\n0.5, 0, 0, 0, 0\n"
    with pytest.raises(ConfigError) as info:
        parse_scenario(text, source="bad.txt")
    assert info.value.line == 5
    assert "bad.txt:5" in str(info.value)


@pytest.mark.parametrize("text, match", [
    ("duration = 1\nbogus = 2\n", "unknown scenario keys"),
    ("duration = 1\n[schedule]\n0, 1, 2\n", "5 values"),
    ("duration = 1\n[events]\n", "unknown sections"),
    ("duration = 1\nintegrator = euler\n", "integrator"),
    ("duration = 0\n", "duration"),
    ("seed = 1\n", "missing key 'duration'"),
])
def test_scenario_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_scenario(text)


def test_csv_header_and_round_trip(tmp_path):
    _, result = shipped_run("roll_pos")
    rows = result.telemetry[::200]
    text = csv_text(rows)
    assert text.splitlines()[0].split(",") == list(TELEMETRY_HEADER)
    assert TELEMETRY_HEADER[:4] == ("t", "phi_deg", "theta_deg", "psi_deg")
    path = tmp_path / "t.csv"
    write_telemetry(path, rows)
    back = read_telemetry(path)
    assert len(back) == len(rows)
    for a, b in zip(back, rows):
        assert a.cmd1 == b.cmd1
        assert np.allclose(dataclasses.astuple(a), dataclasses.astuple(b), rtol=1e-14, atol=1e-300)


def test_csv_angles_in_degrees():
    _, result = shipped_run("roll_pos")
    rec = result.telemetry[-1500]
    line = csv_text([rec]).splitlines()[1].split(",")
    assert float(line[1]) == pytest.approx(math.degrees(rec.phi), rel=1e-15)


def test_read_telemetry_rejects_header(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="header"):
        read_telemetry(path)


def test_determinism_byte_identical(params, prop):
    spec = dataclasses.replace(shipped_run("noisy_roll")[0], duration=1.5)
    a = csv_text(run_scenario(spec, params, SIMULATION_GAINS, prop).telemetry)
    b = csv_text(run_scenario(spec, params, SIMULATION_GAINS, prop).telemetry)
    assert a == b
    c = csv_text(run_scenario(dataclasses.replace(spec, seed=spec.seed + 1), params, SIMULATION_GAINS, prop).telemetry)
    assert c != a


def test_telemetry_time_strictly_increasing():
    _, result = shipped_run("yaw_pos")
    t = result.column("t")
    assert np.all(np.diff(t) > 0)
    assert t[0] == 0.0


@pytest.mark.parametrize("axis, pos, neg", [("phi", "roll_pos", "roll_neg"), ("theta", "pitch_pos", "pitch_neg"),
                                            ("psi", "yaw_pos", "yaw_neg")])
def test_mirror_symmetry(axis, pos, neg):
    a = shipped_run(pos)[1].column(axis)
    b = shipped_run(neg)[1].column(axis)
    assert np.max(np.abs(a + b)) < 1e-9


@pytest.mark.parametrize("name", ["roll_pos", "roll_neg"])
def test_roll_cross_coupling(name):
    _, result = shipped_run(name)
    assert np.max(np.abs(np.degrees(result.column("theta")))) < 0.5
    assert np.max(np.abs(np.degrees(result.column("psi")))) < 0.5
    assert np.min(result.column("z")) > -0.05


@given(st.floats(0.01, 0.2), st.sampled_from([50.0, 100.0, 450.0, 449.0]))
def test_tick_count(duration, hz):
    spec = ScenarioSpec(duration=duration, controller_hz=hz)
    assert spec.ticks == round(duration * hz)


def test_tick_count_matches_run(params, prop):
    spec = ScenarioSpec(duration=0.1, controller_hz=449.0, integrator="rk4")
    assert len(run_scenario(spec, params, SIMULATION_GAINS, prop).telemetry) == round(0.1 * 449.0)


def test_divergence_keeps_partial_telemetry(params, prop):
    spec = ScenarioSpec(duration=3.0, integrator="rk4", alpha_ema_p=1.0, alpha_ema_q=1.0, alpha_ema_r=1.0,
                        schedule=(ScheduleRow(0.0, 0.0, 5.0),), limits=DivergenceLimits(angle_deg=1.0))
    with pytest.raises(DivergenceError, match="attitude") as info:
        run_scenario(spec, params, SIMULATION_GAINS, prop)
    err = info.value
    assert 0 < len(err.telemetry) < spec.ticks
    assert err.t == pytest.approx(len(err.telemetry) / spec.controller_hz)


def test_step_metrics_synthetic():
    t = np.linspace(0, 4, 401)
    y = 1 - np.exp(-3 * t) * np.cos(6 * t)
    m = step_metrics(t, y, 0.0, 0.0, 1.0, 0.01)
    outside = np.flatnonzero(np.abs(y - 1) > 0.01)
    assert m.settling_time == pytest.approx(t[outside[-1] + 1])
    assert m.overshoot == pytest.approx(np.max(y) - 1)
    assert m.steady_state_error == pytest.approx(abs(y[-1] - 1))
    assert step_metrics(t, np.ones_like(t), 0.0, 0.0, 1.0, 0.01).settling_time == 0.0
    assert step_metrics(t, t / 8, 0.0, 0.0, 1.0, 0.01).settling_time is None
    with pytest.raises(ValueError):
        step_metrics(t[:0], y[:0], 0.0, 0.0, 1.0, 0.01)


def test_step_metrics_downward_overshoot():
    t = np.linspace(0, 1, 5)
    m = step_metrics(t, np.array([2.0, 1.0, -0.2, 0.05, 0.0]), 0.0, 2.0, 0.0, 0.01)
    assert m.overshoot == pytest.approx(0.2)


def test_yaw_spin_reaches_drag_root(params, prop):
    spec = yaw_spin_spec(3.0, duration=40.0, controller_hz=100.0, integrator="rk4")
    result = run_scenario(spec, params, ControllerGains(), prop)
    ss = steady_yaw_state(result, prop)
    # independent root of gamma1 r^2 + gamma2 = tau
    root = math.sqrt((ss.tau_applied - params.gamma2) / params.gamma1)
    assert ss.r_ss == pytest.approx(root, rel=1e-6)
    assert np.max(np.abs(result.column("phi"))) == 0.0 and np.max(np.abs(result.column("z"))) == 0.0


def test_steady_yaw_state_rejects_transient(params, prop):
    result = run_scenario(yaw_spin_spec(3.0, duration=2.0, controller_hz=100.0, integrator="rk4"),
                          params, ControllerGains(), prop)
    with pytest.raises(ValueError, match="not steady"):
        steady_yaw_state(result, prop)


def test_drag_sweep_recovers_coefficients(params, prop):
    fit = fit_drag_coefficients(drag_sweep(params, prop, [1.5, 3.0, 4.5, 6.0]))
    assert fit.gamma1 == pytest.approx(params.gamma1, rel=1e-3)
    assert fit.gamma2 == pytest.approx(params.gamma2, rel=1e-3)


def test_noisy_scenario_calibrates_biases():
    spec, result = shipped_run("noisy_roll")
    est = np.array(result.biases.gyro)
    assert np.allclose(est, spec.noise.gyro_bias, atol=3 * 0.01 / math.sqrt(spec.calibration_time * 450))
    phi = np.degrees(result.column("phi"))
    t = result.column("t")
    assert abs(np.mean(phi[(t > 3.5) & (t < 5.0)]) - 5.0) < 0.5
