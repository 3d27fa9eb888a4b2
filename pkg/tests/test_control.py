import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from quadsim.cli import data_path
from quadsim.config import ConfigError
from quadsim.control import (
    SIMULATION_GAINS,
    HARDWARE_GAINS,
    ControlOutputs,
    ControllerGains,
    FlightController,
    PidGains,
    PidState,
    References,
    count_oscillations,
    dump_gains,
    load_gains,
    mixer,
    pid_step,
    wrap_angle,
)
from quadsim.dynamics import SingularAttitude
from quadsim.model import DEFAULT_PROPELLER, REFERENCE_AIRFRAME, base_weight

B = base_weight(REFERENCE_AIRFRAME)


def run_pid(gains, ys, y_d=0.0, dt=0.01, refs=None):
    state, out = PidState(), []
    for k, y in enumerate(ys):
        u, state = pid_step(gains, state, refs[k] if refs else y_d, y, k * dt)
        out.append(u)
    return np.array(out)


def test_pid_examples():
    assert pid_step(PidGains(1, 1, 1), PidState(), 0.0, 0.0, 0.0)[0] == 0.0
    assert pid_step(PidGains(kp=2.0), PidState(), 1.5, 0.0, 0.0)[0] == 3.0
    _, s = pid_step(PidGains(kd=1.0), PidState(), 0.0, 0.0, 0.0)
    u, _ = pid_step(PidGains(kd=1.0), s, 0.0, 0.1, 0.01)
    assert u == pytest.approx(-10.0, rel=1e-12)


def test_pid_integral_rectangle_sum():
    u = run_pid(PidGains(ki=2.0), [0.0] * 5, y_d=1.0, dt=0.1)
    assert u[-1] == pytest.approx(2.0 * 0.4, rel=1e-12)


def test_pid_timestamps_must_increase():
    _, s = pid_step(PidGains(), PidState(), 0, 0, 1.0)
    with pytest.raises(ValueError):
        pid_step(PidGains(), s, 0, 0, 1.0)


def test_negative_gain_rejected():
    with pytest.raises(ValueError):
        PidGains(kp=-1.0)


def test_integral_clamp():
    g = PidGains(ki=0.5)
    state = PidState()
    for k in range(1000):
        u, state = pid_step(g, state, 10.0, 0.0, k * 0.1, integral_limit=B)
    assert u == pytest.approx(B)
    assert g.ki * state.integral == pytest.approx(B)


gains_st = st.builds(PidGains, st.floats(0, 20), st.floats(0, 5), st.floats(0, 1))
trace_st = st.lists(st.floats(-10, 10), min_size=2, max_size=20)


@given(gains_st, trace_st, st.floats(-3, 3), st.floats(-3, 3))
def test_pid_linear(gains, trace, a, b):
    e2 = [math.sin(i) for i in range(len(trace))]
    combo = [a * x + b * y for x, y in zip(trace, e2)]
    lhs = run_pid(gains, combo)
    rhs = a * run_pid(gains, trace) + b * run_pid(gains, e2)
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-9)


@given(trace_st, st.lists(st.floats(-10, 10), min_size=20, max_size=20))
def test_derivative_ignores_setpoint_steps(ys, refs):
    kd_only = PidGains(kd=1.3)
    assert np.array_equal(run_pid(kd_only, ys, refs=refs), run_pid(kd_only, ys))


def test_mixer_examples():
    assert mixer(B, ControlOutputs(), 0, 0) == (B, B, B, B)
    assert mixer(B, ControlOutputs(u_psi=0.1), 0, 0) == (B + 0.1, B - 0.1, B + 0.1, B - 0.1)


def test_mixer_tilt_compensation():
    f = mixer(B, ControlOutputs(u_z=0.5), 0.3, -0.2, clamp=False)
    assert sum(f) == pytest.approx(4 * B + 4 * 0.5 / (math.cos(0.3) * math.cos(-0.2)), rel=1e-14)
    with pytest.raises(SingularAttitude):
        mixer(B, ControlOutputs(), math.pi / 2, 0)


u_st = st.floats(-B, B)


@given(u_st, u_st, u_st, u_st)
def test_mixer_algebra_when_unclamped(uz, uphi, utheta, upsi):
    f1, f2, f3, f4 = mixer(B, ControlOutputs(uz, uphi, utheta, upsi), 0, 0, clamp=False)
    assert f3 - f1 == pytest.approx(2 * utheta, abs=1e-12)
    assert f2 - f4 == pytest.approx(2 * uphi, abs=1e-12)
    assert f1 - f2 + f3 - f4 == pytest.approx(4 * upsi, abs=1e-12)
    assert f1 + f2 + f3 + f4 == pytest.approx(4 * B + 4 * uz, abs=1e-12)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50),
       st.floats(-1.4, 1.4), st.floats(-1.4, 1.4))
def test_clamp_bounds(uz, uphi, utheta, upsi, phi, theta):
    u = ControlOutputs(uz, uphi, utheta, upsi).clamped(B)
    assert all(-B <= v <= B for v in (u.u_z, u.u_phi, u.u_theta, u.u_psi))
    assert all(0 <= f <= 2 * B for f in mixer(B, u, phi, theta))


def test_wrap_angle():
    assert wrap_angle(math.pi) == -math.pi
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    assert wrap_angle(0.3) == pytest.approx(0.3)


def controller(gains=SIMULATION_GAINS, **kw):
    return FlightController(REFERENCE_AIRFRAME, DEFAULT_PROPELLER, gains, **kw)


def test_tick_at_reference_gives_base_weight():
    out = controller().tick(0.0, References(), 0, 0, 0, 0)
    assert out.demanded == (B, B, B, B)
    # quantization keeps the delivered thrust within one output count
    assert all(abs(f - B) < 2e-3 for f in out.thrusts)


def test_tick_altitude_sign():
    out = controller().tick(0.0, References(z=1.0), 0, 0, 0, 0)
    assert out.u.u_z > 0
    assert sum(out.demanded) > 4 * B


def test_tick_roll_reference():
    out = controller().tick(0.0, References(phi=math.radians(5)), 0, 0, 0, 0)
    f1, f2, f3, f4 = out.demanded
    assert f2 > B > f4
    assert f1 == f3 == B + out.u.u_z
    assert out.u.u_phi == pytest.approx(17.1 * math.radians(5), rel=1e-12)


def test_altitude_decimation_holds_output():
    fc = controller()
    uz = []
    for k in range(25):
        out = fc.tick(k / 450, References(z=1.0), 0, 0, 0, 1e-4 * k)
        uz.append(out.u.u_z)
    assert len(set(uz[0:10])) == 1 and len(set(uz[10:20])) == 1
    assert uz[10] != uz[9] and uz[20] != uz[19]
    assert fc.period == pytest.approx(1 / 450)


def test_yaw_error_wraps():
    out = controller().tick(0.0, References(psi=math.radians(179)), 0, 0, math.radians(-179), 0)
    assert out.u.u_psi == pytest.approx(7.7 * math.radians(-2), rel=1e-9)


def test_yaw_derivative_continuous_across_seam():
    fc = controller(ControllerGains(psi=PidGains(kd=1.0)))
    fc.tick(0.0, References(), 0, 0, math.pi - 0.001, 0)
    out = fc.tick(0.01, References(), 0, 0, -math.pi + 0.001, 0)
    assert out.u.u_psi == pytest.approx(-0.002 / 0.01, rel=1e-6)


def test_reset():
    fc = controller()
    fc.tick(0.0, References(z=1.0), 0, 0, 0, 0)
    fc.reset()
    assert fc.ticks == 0 and fc.held_uz == 0.0


def test_shipped_gain_files(tmp_path):
    assert load_gains(data_path("gains_simulation.txt")) == SIMULATION_GAINS
    assert load_gains(data_path("gains_hardware.txt")) == HARDWARE_GAINS
    out = tmp_path / "g.txt"
    out.write_text(dump_gains(HARDWARE_GAINS))
    assert load_gains(out) == HARDWARE_GAINS


def test_gain_file_errors(tmp_path):
    bad = tmp_path / "g.txt"
    bad.write_text("kp_z = 1\nkq_z = 2\n")
    with pytest.raises(ConfigError, match="kq_z"):
        load_gains(bad)
    bad.write_text("kp_z = -1\n")
    with pytest.raises(ConfigError):
        load_gains(bad)


def test_count_oscillations_examples():
    t = np.linspace(0, 5, 2001)
    assert count_oscillations(1 - np.exp(-t), 1.0, deadband=1e-3) == 0
    overshoot = 1 - np.exp(-2 * t) * np.cos(np.minimum(t, 1.2) * 2.5)
    overshoot[t > 1.2] = 1 + (overshoot[t > 1.2][0] - 1) * np.exp(-5 * (t[t > 1.2] - 1.2))
    assert count_oscillations(overshoot, 1.0, deadband=1e-3) == 1


def test_count_oscillations_decaying_sine():
    # three full periods whose smallest lobe still clears the deadband
    T = 1.0
    t = np.linspace(0, 3 * T, 3001)
    trace = 2.0 + np.sin(2 * np.pi * t / T) * np.exp(-t / 4)
    assert count_oscillations(trace, 2.0, deadband=0.05) == 3
    # the same trace with lobes under the deadband after the first period
    # lobe peaks: +0.47, -0.105, +0.024 against a band of 0.08
    assert count_oscillations(2.0 + np.sin(2 * np.pi * t) * np.exp(-3 * t), 2.0, deadband=0.08) == 1


def test_count_oscillations_deadband_suppresses_noise():
    rng = np.random.default_rng(0)
    assert count_oscillations(1.0 + rng.normal(0, 1e-4, 500), 1.0, deadband=1e-3) == 0
    with pytest.raises(ValueError):
        count_oscillations([], 0.0)


@given(st.integers(1, 6), st.floats(0.01, 0.3))
def test_count_oscillations_pure_sine(n, tau):
    assume(n * tau < 1)
    t = np.linspace(0, n, 200 * n + 1)
    trace = np.sin(2 * np.pi * t + 0.1)
    assert count_oscillations(trace, 0.0, deadband=0.01) == n
