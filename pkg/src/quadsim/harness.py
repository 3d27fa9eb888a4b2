"""Closed-loop scenario runner, scenario files and telemetry CSV."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import astuple, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from quadsim.config import ConfigError, dump_keyvalue, format_float, parse_keyvalue, to_float
from quadsim.control import (
    DEFAULT_ALTITUDE_DECIMATION,
    DEFAULT_CONTROLLER_HZ,
    ControllerGains,
    FlightController,
    References,
    count_oscillations,
)
from quadsim.dynamics import SingularAttitude, integrate_adaptive, step_rk4
from quadsim.estimation import YawSteadyState
from quadsim.integrators import IntegrationError
from quadsim.model import STATE_FIELDS, PropellerModel, QuadcopterParams, State
from quadsim.propeller import command_for_thrust, thrust_for_command, thrust_to_torque
from quadsim.sensing import (
    FILTER_KEYS,
    HARDWARE_ALPHA_EMA,
    HARDWARE_ALPHA_ROLL_PITCH,
    HARDWARE_ALPHA_YAW,
    AttitudeFilter,
    FilterConfig,
    ImuNoise,
    SensorBiases,
    calibrate_biases,
    simulate_imu,
)

# Settling bands: 1 cm for altitude, 0.1 degree for angles.
ALTITUDE_TOLERANCE = 0.01
ANGLE_TOLERANCE = math.radians(0.1)
TOLERANCES = {"z": ALTITUDE_TOLERANCE, "phi": ANGLE_TOLERANCE, "theta": ANGLE_TOLERANCE, "psi": ANGLE_TOLERANCE}

INTEGRATORS = ("adaptive", "rk4")


class DivergenceError(RuntimeError):
    """The simulated state left the configured envelope.

    ``telemetry`` holds every record logged before the failure.
    """

    def __init__(self, message: str, telemetry: list["TelemetryRecord"], t: float):
        super().__init__(message)
        self.telemetry = telemetry
        self.t = t


@dataclass(frozen=True)
class ScheduleRow:
    t: float
    z_d: float
    phi_d_deg: float = 0.0
    theta_d_deg: float = 0.0
    psi_d_deg: float = 0.0

    def references(self) -> References:
        return References(self.z_d, math.radians(self.phi_d_deg), math.radians(self.theta_d_deg),
                          math.radians(self.psi_d_deg))


@dataclass(frozen=True)
class DivergenceLimits:
    angle_deg: float = 85.0
    altitude: float = 100.0
    rate: float = 100.0


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything needed to reproduce one simulated flight."""

    duration: float
    controller_hz: float = DEFAULT_CONTROLLER_HZ
    altitude_decimation: int = DEFAULT_ALTITUDE_DECIMATION
    schedule: tuple[ScheduleRow, ...] = ()
    initial: State = State()
    noise: ImuNoise = ImuNoise()
    altitude_sigma: float = 0.0  # m
    calibration_time: float = 0.0  # s of stationary data used for bias calibration
    alpha_phi: float = HARDWARE_ALPHA_ROLL_PITCH
    alpha_theta: float = HARDWARE_ALPHA_ROLL_PITCH
    alpha_psi: float = HARDWARE_ALPHA_YAW
    alpha_ema_p: float = HARDWARE_ALPHA_EMA
    alpha_ema_q: float = HARDWARE_ALPHA_EMA
    alpha_ema_r: float = HARDWARE_ALPHA_EMA
    bearing: bool = False  # airframe on the yaw bearing rig
    propellers: tuple[bool, bool, bool, bool] = (True, True, True, True)
    open_loop_thrust: float | None = None  # bypass the controller, N per enabled motor
    seed: int = 0
    integrator: str = "adaptive"
    rtol: float = 1e-6
    atol: float = 1e-9
    limits: DivergenceLimits = DivergenceLimits()

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not self.controller_hz > 0:
            raise ValueError("controller_hz must be positive")
        if self.altitude_decimation < 1:
            raise ValueError("altitude_decimation must be >= 1")
        times = [row.t for row in self.schedule]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("schedule times must be non-decreasing")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}, got {self.integrator!r}")
        if self.open_loop_thrust is not None and self.open_loop_thrust < 0:
            raise ValueError("open_loop_thrust must be non-negative")
        if self.altitude_sigma < 0 or self.calibration_time < 0:
            raise ValueError("altitude_sigma and calibration_time must be non-negative")

    @property
    def ticks(self) -> int:
        return round(self.duration * self.controller_hz)

    def references_at(self, t: float) -> References:
        current = References()
        for row in self.schedule:
            if row.t > t:
                break
            current = row.references()
        return current

    def filter_config(self, biases: SensorBiases = SensorBiases()) -> FilterConfig:
        return FilterConfig(dt=1.0 / self.controller_hz, biases=biases,
                            **{k: getattr(self, k) for k in FILTER_KEYS})


@dataclass(frozen=True)
class TelemetryRecord:
    t: float
    phi: float
    theta: float
    psi: float
    p: float
    q: float
    r: float
    x: float
    y: float
    z: float
    vx: float
    vy: float
    vz: float
    phi_f: float
    theta_f: float
    psi_f: float
    f1: float
    f2: float
    f3: float
    f4: float
    u_z: float
    u_phi: float
    u_theta: float
    u_psi: float
    cmd1: int
    cmd2: int
    cmd3: int
    cmd4: int

    @property
    def state(self) -> State:
        return State(*astuple(self)[1:13])


TELEMETRY_FIELDS = tuple(f.name for f in fields(TelemetryRecord))
_ANGLE_COLUMNS = {"phi", "theta", "psi", "phi_f", "theta_f", "psi_f"}
TELEMETRY_HEADER = tuple(f"{name}_deg" if name in _ANGLE_COLUMNS else name for name in TELEMETRY_FIELDS)


@dataclass(frozen=True)
class StepMetrics:
    axis: str
    t_step: float
    start: float
    target: float
    tolerance: float
    settling_time: float | None  # None: still outside the band when the segment ends
    overshoot: float  # beyond the target in the step direction, same units
    oscillations: int
    steady_state_error: float


@dataclass
class ScenarioResult:
    telemetry: list[TelemetryRecord]
    summary: dict[str, list[StepMetrics]]
    biases: SensorBiases = field(default_factory=SensorBiases)

    @property
    def ticks(self) -> int:
        return len(self.telemetry)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(rec, name) for rec in self.telemetry])


def _unwrap(values: np.ndarray) -> np.ndarray:
    return np.unwrap(values) if values.size else values


def step_metrics(t: np.ndarray, y: np.ndarray, t_step: float, start: float, target: float,
                 tolerance: float, axis: str = "") -> StepMetrics:
    """Settling time, overshoot and oscillation count of one step response.

    The settling time is measured from ``t_step`` to the first sample after the
    last excursion outside ``target +- tolerance``.
    """
    if t.size == 0:
        raise ValueError("empty response segment")
    e = y - target
    outside = np.flatnonzero(np.abs(e) > tolerance)
    if outside.size == 0:
        settling = 0.0
    elif outside[-1] == e.size - 1:
        settling = None
    else:
        settling = float(t[outside[-1] + 1] - t_step)
    direction = 1.0 if target >= start else -1.0
    overshoot = max(0.0, float(np.max(direction * e)))
    return StepMetrics(
        axis=axis,
        t_step=t_step,
        start=start,
        target=target,
        tolerance=tolerance,
        settling_time=settling,
        overshoot=overshoot,
        oscillations=count_oscillations(y, target, deadband=tolerance),
        steady_state_error=float(abs(e[-1])),
    )


def summarize(spec: ScenarioSpec, telemetry: Sequence[TelemetryRecord]) -> dict[str, list[StepMetrics]]:
    """Step metrics for every reference change of every controlled axis."""
    t = np.array([rec.t for rec in telemetry])
    summary: dict[str, list[StepMetrics]] = {axis: [] for axis in TOLERANCES}
    if t.size == 0:
        return summary
    traces = {
        "z": np.array([rec.z for rec in telemetry]),
        "phi": np.array([rec.phi for rec in telemetry]),
        "theta": np.array([rec.theta for rec in telemetry]),
        "psi": _unwrap(np.array([rec.psi for rec in telemetry])),
    }
    for axis in TOLERANCES:
        previous = getattr(References(), axis)
        changes = []
        for row in spec.schedule:
            value = getattr(row.references(), axis)
            if value != previous:
                changes.append((row.t, previous, value))
                previous = value
        for i, (t_step, start, target) in enumerate(changes):
            end = changes[i + 1][0] if i + 1 < len(changes) else math.inf
            mask = (t >= t_step) & (t < end)
            if not mask.any():
                continue
            summary[axis].append(step_metrics(t[mask], traces[axis][mask], t_step, start, target,
                                              TOLERANCES[axis], axis))
    return summary


def _check_envelope(s: State, limits: DivergenceLimits) -> str | None:
    if not s.is_finite():
        return "non-finite state"
    max_angle = math.radians(limits.angle_deg)
    if abs(s.phi) > max_angle or abs(s.theta) > max_angle:
        return f"attitude beyond {limits.angle_deg:g} deg (phi={math.degrees(s.phi):.2f}, theta={math.degrees(s.theta):.2f})"
    if abs(s.z) > limits.altitude:
        return f"altitude beyond {limits.altitude:g} m (z={s.z:.2f})"
    if max(abs(s.p), abs(s.q), abs(s.r)) > limits.rate:
        return f"body rate beyond {limits.rate:g} rad/s"
    return None


def run_scenario(spec: ScenarioSpec, params: QuadcopterParams, gains: ControllerGains,
                 prop: PropellerModel) -> ScenarioResult:
    """Fly ``spec`` in closed loop and log one telemetry record per tick.

    Every tick: sample the IMU, smooth and fuse attitude, run the PID loops,
    mix, quantize the motor commands, then integrate the dynamics to the next
    tick with those thrusts held constant.
    """
    hz = spec.controller_hz
    n = spec.ticks
    rng = np.random.default_rng(spec.seed)
    mask = tuple(bool(m) for m in spec.propellers)
    biases = SensorBiases()
    if spec.calibration_time > 0 and spec.open_loop_thrust is None:
        # stationary, level recording before take-off
        still = State(z=spec.initial.z, psi=spec.initial.psi)
        samples = [simulate_imu(still, spec.noise, rng, k / hz) for k in range(round(spec.calibration_time * hz) + 1)]
        biases = calibrate_biases(samples)
    attitude = AttitudeFilter(spec.filter_config(biases))
    controller = FlightController(params, prop, gains, controller_hz=hz,
                                  altitude_decimation=spec.altitude_decimation)
    open_loop = None
    if spec.open_loop_thrust is not None:
        cmd, _ = command_for_thrust(spec.open_loop_thrust, prop)
        open_loop = (cmd, thrust_for_command(cmd, prop))

    state = spec.initial
    telemetry: list[TelemetryRecord] = []
    z_meas = state.z
    h = None
    for k in range(n):
        t = k / hz
        if open_loop is not None:
            cmd, f = open_loop
            thrusts = tuple(f if on else 0.0 for on in mask)
            scaled = tuple(cmd.scaled if on else 0 for on in mask)
            filtered = (state.phi, state.theta, state.psi)
            u = (0.0, 0.0, 0.0, 0.0)
        else:
            reading = simulate_imu(state, spec.noise, rng, t)
            filtered = attitude.update(reading)
            if k % spec.altitude_decimation == 0:
                z_meas = state.z + (rng.normal(0.0, spec.altitude_sigma) if spec.altitude_sigma else 0.0)
            try:
                out = controller.tick(t, spec.references_at(t), *filtered, z_meas)
            except SingularAttitude as exc:
                raise DivergenceError(str(exc), telemetry, t) from exc
            thrusts = tuple(f if on else 0.0 for f, on in zip(out.thrusts, mask))
            scaled = tuple(c.scaled if on else 0 for c, on in zip(out.commands, mask))
            u = (out.u.u_z, out.u.u_phi, out.u.u_theta, out.u.u_psi)
        telemetry.append(TelemetryRecord(t, *astuple(state), *filtered, *thrusts, *u, *scaled))

        t_next = (k + 1) / hz
        try:
            if spec.integrator == "rk4":
                state = step_rk4(state, thrusts, t_next - t, params, prop, bearing=spec.bearing,
                                 yaw_rig=spec.bearing)
            else:
                traj = integrate_adaptive(state, [(t, thrusts)], (t, t_next), params, prop, rtol=spec.rtol,
                                          atol=spec.atol, bearing=spec.bearing, yaw_rig=spec.bearing, h0=h)
                state = traj.final
                h = traj.h_next
        except (IntegrationError, SingularAttitude) as exc:
            raise DivergenceError(f"t = {t_next:.4f} s: {exc}", telemetry, t_next) from exc
        problem = _check_envelope(state, spec.limits)
        if problem:
            raise DivergenceError(f"t = {t_next:.4f} s: {problem}", telemetry, t_next)

    summary = summarize(spec, telemetry) if open_loop is None else {axis: [] for axis in TOLERANCES}
    return ScenarioResult(telemetry, summary, biases)


# -- yaw spin rig ---------------------------------------------------------------

def yaw_spin_spec(thrust: float, duration: float = 40.0, controller_hz: float = DEFAULT_CONTROLLER_HZ,
                  integrator: str = "adaptive") -> ScenarioSpec:
    """Propellers 1 and 3 at a fixed thrust, 2 and 4 off, airframe on the bearing."""
    return ScenarioSpec(duration=duration, controller_hz=controller_hz, bearing=True,
                        propellers=(True, False, True, False), open_loop_thrust=thrust, integrator=integrator)


def steady_yaw_state(result: ScenarioResult, prop: PropellerModel, threshold: float = 1e-3,
                     hold: float = 1.0) -> YawSteadyState:
    """Applied yaw torque and the final yaw rate of a spin-rig run.

    Steady state requires ``|dr/dt| < threshold`` (rad/s^2) over the last
    ``hold`` seconds of the run.
    """
    rec = result.telemetry
    if len(rec) < 3:
        raise ValueError("run too short to judge steady state")
    t = np.array([x.t for x in rec])
    r = np.array([x.r for x in rec])
    rdot = np.diff(r) / np.diff(t)
    tail = t[1:] >= t[-1] - hold
    if np.any(np.abs(rdot[tail]) >= threshold):
        raise ValueError(f"yaw rate not steady: |dr/dt| up to {np.max(np.abs(rdot[tail])):.3g} rad/s^2")
    last = rec[-1]
    tau = (thrust_to_torque(last.f1, prop) - thrust_to_torque(last.f2, prop)
           + thrust_to_torque(last.f3, prop) - thrust_to_torque(last.f4, prop))
    return YawSteadyState(tau_applied=tau, r_ss=last.r)


def drag_sweep(params: QuadcopterParams, prop: PropellerModel, thrusts: Sequence[float],
               duration: float = 40.0, integrator: str = "rk4", log_hz: float = 100.0) -> list[YawSteadyState]:
    """Spin-rig steady states for each thrust level (the drag-identification experiment).

    No controller runs on the rig, so the state is logged and integrated at
    ``log_hz`` rather than the controller rate.
    """
    points = []
    for f in thrusts:
        spec = yaw_spin_spec(f, duration, controller_hz=log_hz, integrator=integrator)
        result = run_scenario(spec, params, ControllerGains(), prop)
        points.append(steady_yaw_state(result, prop))
    return points


# -- scenario files ---------------------------------------------------------------

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _parse_bool(text: str, key: str, source: str | None) -> bool:
    low = text.strip().lower()
    if low in _BOOL_TRUE:
        return True
    if low in _BOOL_FALSE:
        return False
    raise ConfigError(f"key {key!r}: expected a boolean, got {text!r}", path=source)


def _parse_vector(text: str, n: int, key: str, source: str | None) -> tuple[float, ...]:
    parts = [p.strip() for p in text.split(",")]
    try:
        values = tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"key {key!r}: expected {n} comma-separated numbers", path=source) from None
    if len(values) != n:
        raise ConfigError(f"key {key!r}: expected {n} values, got {len(values)}", path=source)
    return values


_SCALAR_KEYS = {
    "duration", "controller_hz", "altitude_decimation", "seed", "integrator", "rtol", "atol", "bearing",
    "propellers", "open_loop_thrust", "altitude_sigma", "calibration_time", "accel_sigma", "gyro_sigma",
    "mag_sigma", "accel_bias", "gyro_bias", "mag_field", "max_angle_deg", "max_altitude", "max_rate",
    *FILTER_KEYS,
    *(f"initial_{name}" for name in STATE_FIELDS),
    "initial_phi_deg", "initial_theta_deg", "initial_psi_deg",
}


def parse_scenario(text: str, source: str | None = None) -> ScenarioSpec:
    pairs, sections = parse_keyvalue(text, source)
    unknown = sorted(set(pairs) - _SCALAR_KEYS)
    if unknown:
        raise ConfigError(f"unknown scenario keys: {', '.join(unknown)}", path=source)
    extra = sorted(set(sections) - {"schedule"})
    if extra:
        raise ConfigError(f"unknown sections: {', '.join(extra)}", path=source)

    def num(key, default):
        return to_float(pairs, key, source) if key in pairs else default

    schedule = []
    last_t = -math.inf
    for lineno, line in sections.get("schedule", []):
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != 5:
            raise ConfigError(f"schedule row needs 5 values (t, z_d, phi_d_deg, theta_d_deg, psi_d_deg), "
                              f"got {len(cells)}", lineno, source)
        try:
            row = ScheduleRow(*(float(c) for c in cells))
        except ValueError:
            raise ConfigError(f"non-numeric schedule value in {line!r}", lineno, source) from None
        if row.t < last_t:
            raise ConfigError(f"schedule time {row.t:g} decreases (previous {last_t:g})", lineno, source)
        last_t = row.t
        schedule.append(row)

    initial = {}
    for name in STATE_FIELDS:
        if f"initial_{name}" in pairs:
            initial[name] = to_float(pairs, f"initial_{name}", source)
    for name in ("phi", "theta", "psi"):
        key = f"initial_{name}_deg"
        if key in pairs:
            if name in initial:
                raise ConfigError(f"both initial_{name} and {key} given", path=source)
            initial[name] = math.radians(to_float(pairs, key, source))

    default_noise = ImuNoise()
    noise = ImuNoise(
        accel_sigma=num("accel_sigma", 0.0),
        gyro_sigma=num("gyro_sigma", 0.0),
        mag_sigma=num("mag_sigma", 0.0),
        accel_bias=_parse_vector(pairs["accel_bias"], 3, "accel_bias", source) if "accel_bias" in pairs
        else default_noise.accel_bias,
        gyro_bias=_parse_vector(pairs["gyro_bias"], 3, "gyro_bias", source) if "gyro_bias" in pairs
        else default_noise.gyro_bias,
        field=_parse_vector(pairs["mag_field"], 3, "mag_field", source) if "mag_field" in pairs
        else default_noise.field,
    )
    propellers = (True,) * 4
    if "propellers" in pairs:
        propellers = tuple(bool(v) for v in _parse_vector(pairs["propellers"], 4, "propellers", source))
    open_loop = pairs.get("open_loop_thrust", "none").strip().lower()
    defaults = ScenarioSpec(duration=1.0)
    try:
        return ScenarioSpec(
            duration=to_float(pairs, "duration", source),
            controller_hz=num("controller_hz", DEFAULT_CONTROLLER_HZ),
            altitude_decimation=int(num("altitude_decimation", DEFAULT_ALTITUDE_DECIMATION)),
            schedule=tuple(schedule),
            initial=State(**initial),
            noise=noise,
            altitude_sigma=num("altitude_sigma", 0.0),
            calibration_time=num("calibration_time", 0.0),
            bearing=_parse_bool(pairs.get("bearing", "0"), "bearing", source),
            propellers=propellers,
            open_loop_thrust=None if open_loop in ("", "none") else to_float(pairs, "open_loop_thrust", source),
            seed=int(num("seed", 0)),
            integrator=pairs.get("integrator", "adaptive").strip(),
            rtol=num("rtol", defaults.rtol),
            atol=num("atol", defaults.atol),
            limits=DivergenceLimits(num("max_angle_deg", 85.0), num("max_altitude", 100.0), num("max_rate", 100.0)),
            **{k: num(k, getattr(defaults, k)) for k in FILTER_KEYS},
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), path=source) from None


def load_scenario(path: str | Path) -> ScenarioSpec:
    path = Path(path)
    return parse_scenario(path.read_text(encoding="utf-8"), source=str(path))


def dump_scenario(spec: ScenarioSpec, header: str | None = None) -> str:
    pairs: dict[str, object] = {
        "duration": spec.duration,
        "controller_hz": spec.controller_hz,
        "altitude_decimation": spec.altitude_decimation,
        "seed": spec.seed,
        "integrator": spec.integrator,
        "rtol": spec.rtol,
        "atol": spec.atol,
        "bearing": int(spec.bearing),
        "propellers": ", ".join(str(int(m)) for m in spec.propellers),
        "open_loop_thrust": "none" if spec.open_loop_thrust is None else format_float(spec.open_loop_thrust),
        "altitude_sigma": spec.altitude_sigma,
        "calibration_time": spec.calibration_time,
        "accel_sigma": spec.noise.accel_sigma,
        "gyro_sigma": spec.noise.gyro_sigma,
        "mag_sigma": spec.noise.mag_sigma,
        "accel_bias": ", ".join(format_float(v) for v in spec.noise.accel_bias),
        "gyro_bias": ", ".join(format_float(v) for v in spec.noise.gyro_bias),
        "mag_field": ", ".join(format_float(v) for v in spec.noise.field),
        "max_angle_deg": spec.limits.angle_deg,
        "max_altitude": spec.limits.altitude,
        "max_rate": spec.limits.rate,
    }
    pairs.update({k: getattr(spec, k) for k in FILTER_KEYS})
    # initial state in SI units (radians) so the file reproduces it bit for bit
    pairs.update({f"initial_{name}": getattr(spec.initial, name) for name in STATE_FIELDS})
    out = io.StringIO()
    out.write(dump_keyvalue(pairs, header))
    out.write("\n[schedule]\n# t, z_d, phi_d_deg, theta_d_deg, psi_d_deg\n")
    for row in spec.schedule:
        out.write(", ".join(format_float(v) for v in astuple(row)) + "\n")
    return out.getvalue()


def write_scenario(path: str | Path, spec: ScenarioSpec, header: str | None = None) -> None:
    Path(path).write_text(dump_scenario(spec, header), encoding="utf-8")


# -- telemetry CSV ----------------------------------------------------------------

def _cell(name: str, value) -> str:
    if name.startswith("cmd"):
        return str(int(value))
    if name in _ANGLE_COLUMNS:
        value = math.degrees(value)
    return repr(float(value))


def write_telemetry(path_or_file, records: Sequence[TelemetryRecord]) -> None:
    """Write telemetry as CSV, angles in degrees, everything else SI."""
    if hasattr(path_or_file, "write"):
        _write_rows(path_or_file, records)
        return
    with open(path_or_file, "w", newline="", encoding="utf-8") as fh:
        _write_rows(fh, records)


def _write_rows(fh, records: Sequence[TelemetryRecord]) -> None:
    out = csv.writer(fh, lineterminator="\n")
    out.writerow(TELEMETRY_HEADER)
    for rec in records:
        out.writerow([_cell(name, getattr(rec, name)) for name in TELEMETRY_FIELDS])


def read_telemetry(path: str | Path) -> list[TelemetryRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != TELEMETRY_HEADER:
            raise ValueError(f"{path}: unexpected telemetry header")
        for row in reader:
            values = []
            for name, text in zip(TELEMETRY_FIELDS, row):
                if name.startswith("cmd"):
                    values.append(int(text))
                elif name in _ANGLE_COLUMNS:
                    values.append(math.radians(float(text)))
                else:
                    values.append(float(text))
            records.append(TelemetryRecord(*values))
    return records
