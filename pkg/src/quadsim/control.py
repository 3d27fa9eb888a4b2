"""Discrete PID loops, thrust mixer and the per-tick flight controller."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from quadsim.config import ConfigError, dump_keyvalue, read_keyvalue, to_float
from quadsim.dynamics import SingularAttitude
from quadsim.model import PropellerModel, QuadcopterParams, base_weight
from quadsim.propeller import MotorCommand, command_for_thrust, thrust_for_command

AXES = ("z", "phi", "theta", "psi")
DEFAULT_CONTROLLER_HZ = 450.0
DEFAULT_ALTITUDE_DECIMATION = 10


@dataclass(frozen=True)
class PidGains:
    kp: float = 0.0
    kd: float = 0.0
    ki: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{f.name} must be finite and non-negative, got {value!r}")


@dataclass(frozen=True)
class ControllerGains:
    z: PidGains = PidGains()
    phi: PidGains = PidGains()
    theta: PidGains = PidGains()
    psi: PidGains = PidGains()

    def axis(self, name: str) -> PidGains:
        return getattr(self, name)

    def with_axis(self, name: str, gains: PidGains) -> "ControllerGains":
        values = {a: self.axis(a) for a in AXES}
        values[name] = gains
        return ControllerGains(**values)


# Simulation gains (integral action off).
SIMULATION_GAINS = ControllerGains(
    z=PidGains(kp=1.9, kd=1.6),
    phi=PidGains(kp=17.1, kd=1.3),
    theta=PidGains(kp=17.2, kd=1.3),
    psi=PidGains(kp=7.7, kd=2.7),
)

# Gains retuned on the flying airframe.
HARDWARE_GAINS = ControllerGains(
    z=PidGains(kp=2.4, kd=0.14),
    phi=PidGains(kp=4.48, kd=0.221, ki=0.0045),
    theta=PidGains(kp=4.12, kd=0.13, ki=0.0045),
    psi=PidGains(kp=7.55, kd=0.248),
)


def load_gains(path: str | Path) -> ControllerGains:
    """Read ``kp_z, kd_z, ki_z, kp_phi, ...`` from a gains file.

    Missing keys default to zero so a file may list only the active terms.
    """
    pairs, _ = read_keyvalue(path)
    known = {f"k{t}_{a}" for a in AXES for t in "pdi"}
    unknown = sorted(set(pairs) - known)
    if unknown:
        raise ConfigError(f"unknown gain keys: {', '.join(unknown)}", path=str(path))
    axes = {}
    for a in AXES:
        terms = {t: to_float(pairs, f"k{t}_{a}", str(path)) if f"k{t}_{a}" in pairs else 0.0 for t in "pdi"}
        try:
            axes[a] = PidGains(kp=terms["p"], kd=terms["d"], ki=terms["i"])
        except ValueError as exc:
            raise ConfigError(f"{a}: {exc}", path=str(path)) from None
    return ControllerGains(**axes)


def dump_gains(gains: ControllerGains, header: str | None = None) -> str:
    pairs: dict[str, object] = {}
    for a in AXES:
        g = gains.axis(a)
        pairs[f"kp_{a}"] = g.kp
        pairs[f"kd_{a}"] = g.kd
        pairs[f"ki_{a}"] = g.ki
    return dump_keyvalue(pairs, header)


@dataclass(frozen=True)
class PidState:
    integral: float = 0.0  # sum of error * dt
    prev_y: float | None = None
    prev_t: float | None = None


def pid_step(gains: PidGains, state: PidState, y_d: float, y: float, t_k: float,
             integral_limit: float | None = None) -> tuple[float, PidState]:
    """One update of the discrete PID law with derivative on measurement.

    The derivative term differentiates ``y`` only, so steps in ``y_d`` give
    no output spike. The integral is a rectangle sum of ``error * dt``. With
    ``integral_limit`` set and ``ki > 0`` the accumulator is clamped so that
    ``ki * integral`` stays within ``[-integral_limit, integral_limit]``.
    """
    error = y_d - y
    integral = state.integral
    derivative = 0.0
    if state.prev_t is not None:
        dt = t_k - state.prev_t
        if not dt > 0:
            raise ValueError(f"timestamps must increase: {t_k!r} after {state.prev_t!r}")
        derivative = (y - state.prev_y) / dt
        integral += error * dt
        if integral_limit is not None and gains.ki > 0:
            bound = integral_limit / gains.ki
            integral = min(max(integral, -bound), bound)
    u = gains.kp * error - gains.kd * derivative + gains.ki * integral
    return u, PidState(integral=integral, prev_y=y, prev_t=t_k)


@dataclass(frozen=True)
class ControlOutputs:
    u_z: float = 0.0
    u_phi: float = 0.0
    u_theta: float = 0.0
    u_psi: float = 0.0

    def clamped(self, limit: float) -> "ControlOutputs":
        c = lambda v: min(max(v, -limit), limit)  # noqa: E731
        return ControlOutputs(c(self.u_z), c(self.u_phi), c(self.u_theta), c(self.u_psi))


def mixer(B: float, u: ControlOutputs, phi: float, theta: float, clamp: bool = True) -> tuple[float, float, float, float]:
    """Allocate axis efforts to the four propeller thrusts.

    The collective effort is divided by ``cos(phi) cos(theta)`` to make up
    for lift lost to tilt. Thrusts are clamped to ``[0, 2B]`` unless
    ``clamp`` is false.
    """
    tilt = math.cos(phi) * math.cos(theta)
    if abs(phi) >= math.pi / 2 or abs(theta) >= math.pi / 2 or tilt <= 0:
        raise SingularAttitude(f"cannot compensate tilt at phi={phi!r}, theta={theta!r}")
    uz = u.u_z / tilt
    f = (
        B + uz - u.u_theta + u.u_psi,
        B + uz + u.u_phi - u.u_psi,
        B + uz + u.u_theta + u.u_psi,
        B + uz - u.u_phi - u.u_psi,
    )
    if clamp:
        f = tuple(min(max(fi, 0.0), 2.0 * B) for fi in f)
    return f


def wrap_angle(a: float) -> float:
    """Wrap to ``[-pi, pi)``."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class References:
    z: float = 0.0
    phi: float = 0.0
    theta: float = 0.0
    psi: float = 0.0


@dataclass(frozen=True)
class TickOutput:
    u: ControlOutputs
    demanded: tuple[float, float, float, float]  # mixer output, N
    commands: tuple[MotorCommand, ...]
    thrusts: tuple[float, float, float, float]  # after quantization, N
    saturated: tuple[bool, ...]


@dataclass
class FlightController:
    """Four PID loops feeding the mixer, run once per controller tick.

    The altitude loop only recomputes every ``altitude_decimation``-th tick and
    holds its output in between, mirroring an altitude sensor polled at a
    tenth of the attitude rate.
    """

    params: QuadcopterParams
    prop: PropellerModel
    gains: ControllerGains
    controller_hz: float = DEFAULT_CONTROLLER_HZ
    altitude_decimation: int = DEFAULT_ALTITUDE_DECIMATION
    anti_windup: bool = True
    states: dict[str, PidState] = field(default_factory=lambda: {a: PidState() for a in AXES})
    ticks: int = 0
    held_uz: float = 0.0
    _psi_prev: float | None = None
    _psi_cont: float = 0.0

    def __post_init__(self):
        if not self.controller_hz > 0:
            raise ValueError("controller_hz must be positive")
        if self.altitude_decimation < 1:
            raise ValueError("altitude_decimation must be >= 1")

    @property
    def period(self) -> float:
        return 1.0 / self.controller_hz

    def reset(self) -> None:
        self.states = {a: PidState() for a in AXES}
        self.ticks = 0
        self.held_uz = 0.0
        self._psi_prev = None
        self._psi_cont = 0.0

    def _continuous_yaw(self, psi: float) -> float:
        if self._psi_prev is None:
            self._psi_cont = psi
        else:
            self._psi_cont += wrap_angle(psi - self._psi_prev)
        self._psi_prev = psi
        return self._psi_cont

    def _axis(self, name: str, y_d: float, y: float, t: float) -> float:
        limit = base_weight(self.params) if self.anti_windup else None
        u, self.states[name] = pid_step(self.gains.axis(name), self.states[name], y_d, y, t, limit)
        return u

    def tick(self, t: float, ref: References, phi: float, theta: float, psi: float, z: float) -> TickOutput:
        """Run one controller update on measured attitude and altitude."""
        B = base_weight(self.params)
        if self.ticks % self.altitude_decimation == 0:
            self.held_uz = self._axis("z", ref.z, z, t)
        psi_c = self._continuous_yaw(psi)
        u = ControlOutputs(
            u_z=self.held_uz,
            u_phi=self._axis("phi", ref.phi, phi, t),
            u_theta=self._axis("theta", ref.theta, theta, t),
            # track the wrapped error while differentiating the continuous angle
            u_psi=self._axis("psi", psi_c + wrap_angle(ref.psi - psi_c), psi_c, t),
        ).clamped(B)
        demanded = mixer(B, u, phi, theta)
        commands, saturated, thrusts = [], [], []
        for f in demanded:
            cmd, sat = command_for_thrust(f, self.prop)
            commands.append(cmd)
            saturated.append(sat)
            thrusts.append(thrust_for_command(cmd, self.prop))
        self.ticks += 1
        return TickOutput(u, demanded, tuple(commands), tuple(thrusts), tuple(saturated))


def count_oscillations(trace: Sequence[float], reference: float, deadband: float = 0.0,
                       final: float | None = None) -> int:
    """Number of error cycles in a response trace.

    Counts sign changes of ``trace - final`` (``final`` defaults to the
    reference) with a hysteresis deadband: the sign only flips once the error
    leaves the band on the opposite side. Two sign changes make one cycle;
    a lone overshoot counts as one.
    """
    e = np.asarray(trace, dtype=float)
    if e.size == 0:
        raise ValueError("empty trace")
    e = e - (reference if final is None else final)
    sign = 0
    changes = 0
    for v in e:
        if v > deadband:
            s = 1
        elif v < -deadband:
            s = -1
        else:
            continue
        if sign and s != sign:
            changes += 1
        sign = s
    return (changes + 1) // 2
