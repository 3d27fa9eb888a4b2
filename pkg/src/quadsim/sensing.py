"""Simulated IMU, attitude extraction, complementary fusion and EMA smoothing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from quadsim.control import wrap_angle
from quadsim.dynamics import body_rates_to_euler_rates
from quadsim.model import STANDARD_GRAVITY, State

# Smoothing and fusion weights tuned on the flying airframe.
HARDWARE_ALPHA_EMA = 0.007782062
HARDWARE_ALPHA_ROLL_PITCH = 0.992248062
HARDWARE_ALPHA_YAW = 0.984615385

FILTER_KEYS = ("alpha_phi", "alpha_theta", "alpha_psi", "alpha_ema_p", "alpha_ema_q", "alpha_ema_r")


@dataclass(frozen=True)
class ImuReading:
    accel_x: float
    accel_y: float
    accel_z: float
    gyro_p: float
    gyro_q: float
    gyro_r: float
    mag_x: float
    mag_y: float
    mag_z: float
    timestamp: float = 0.0

    @property
    def accel(self) -> np.ndarray:
        return np.array([self.accel_x, self.accel_y, self.accel_z])

    @property
    def gyro(self) -> np.ndarray:
        return np.array([self.gyro_p, self.gyro_q, self.gyro_r])

    @property
    def mag(self) -> np.ndarray:
        return np.array([self.mag_x, self.mag_y, self.mag_z])


@dataclass(frozen=True)
class SensorBiases:
    gyro: tuple[float, float, float] = (0.0, 0.0, 0.0)
    phi: float = 0.0  # offset of the accelerometer roll estimate, rad
    theta: float = 0.0


@dataclass(frozen=True)
class ImuNoise:
    """Noise and bias injected by :func:`simulate_imu`."""

    accel_sigma: float = 0.0  # m/s^2
    gyro_sigma: float = 0.0  # rad/s
    mag_sigma: float = 0.0  # field units
    accel_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gyro_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    field: tuple[float, float, float] = (1.0, 0.0, 0.0)  # inertial frame, North along x
    g: float = STANDARD_GRAVITY

    def __post_init__(self):
        if min(self.accel_sigma, self.gyro_sigma, self.mag_sigma) < 0:
            raise ValueError("noise standard deviations must be non-negative")
        if not np.linalg.norm(self.field) > 0:
            raise ValueError("magnetic field vector must be non-zero")


def rotation_body_to_inertial(phi: float, theta: float, psi: float) -> np.ndarray:
    """ZYX (yaw-pitch-roll) rotation matrix from body to inertial axes."""
    cphi, sphi = math.cos(phi), math.sin(phi)
    cth, sth = math.cos(theta), math.sin(theta)
    cpsi, spsi = math.cos(psi), math.sin(psi)
    return np.array([
        [cth * cpsi, sphi * sth * cpsi - cphi * spsi, cphi * sth * cpsi + sphi * spsi],
        [cth * spsi, sphi * sth * spsi + cphi * cpsi, cphi * sth * spsi - sphi * cpsi],
        [-sth, sphi * cth, cphi * cth],
    ])


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def simulate_imu(state: State, noise: ImuNoise = ImuNoise(), rng=None, timestamp: float = 0.0) -> ImuReading:
    """Synthesize one IMU + magnetometer sample for the true ``state``.

    The accelerometer reports the gravity reaction ``(0, 0, +g)`` rotated into
    the body frame; linear acceleration of the airframe is not included.
    The gyro reports the body rates. ``rng`` may be a seed or a Generator.
    """
    R = rotation_body_to_inertial(state.phi, state.theta, state.psi)
    accel = R.T @ np.array([0.0, 0.0, noise.g]) + np.asarray(noise.accel_bias)
    gyro = np.array([state.p, state.q, state.r]) + np.asarray(noise.gyro_bias)
    mag = R.T @ np.asarray(noise.field, dtype=float)
    if noise.accel_sigma or noise.gyro_sigma or noise.mag_sigma:
        gen = _as_rng(rng)
        accel = accel + gen.normal(0.0, noise.accel_sigma, 3)
        gyro = gyro + gen.normal(0.0, noise.gyro_sigma, 3)
        mag = mag + gen.normal(0.0, noise.mag_sigma, 3)
    return ImuReading(*accel.tolist(), *gyro.tolist(), *mag.tolist(), timestamp=timestamp)


def accel_to_roll_pitch(reading: ImuReading) -> tuple[float, float]:
    ax, ay, az = reading.accel_x, reading.accel_y, reading.accel_z
    if ax == 0 and ay == 0 and az == 0:
        raise ValueError("zero accelerometer vector")
    phi = math.atan2(ay, az)
    horizontal = math.hypot(ay, az)
    if horizontal == 0:
        theta = math.copysign(math.pi / 2, -ax)
    else:
        theta = math.atan(-ax / horizontal)
    return phi, theta


def mag_to_yaw(reading: ImuReading, phi: float, theta: float) -> float:
    """Tilt-compensated heading from the magnetometer."""
    mx, my, mz = reading.mag_x, reading.mag_y, reading.mag_z
    sphi, cphi = math.sin(phi), math.cos(phi)
    sth, cth = math.sin(theta), math.cos(theta)
    num = mz * sphi - my * cphi
    den = mx * cth + my * sth * sphi + mz * sth * cphi
    if abs(num) < 1e-12 and abs(den) < 1e-12:
        raise ValueError("magnetic field has no horizontal component at this attitude")
    return math.atan2(num, den)


def complementary_fuse(absolute: float, propagated: float, alpha: float, wrap: bool = False) -> float:
    """Blend ``(1 - alpha) * absolute + alpha * propagated``.

    With ``wrap`` set the blend runs along the shortest arc, so headings either
    side of +-pi average correctly.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha!r}")
    if wrap:
        return wrap_angle(propagated + (1.0 - alpha) * wrap_angle(absolute - propagated))
    return (1.0 - alpha) * absolute + alpha * propagated


def ema_step(previous: float, sample: float, alpha_ema: float) -> float:
    if not 0.0 < alpha_ema <= 1.0:
        raise ValueError(f"alpha_ema must lie in (0, 1], got {alpha_ema!r}")
    return alpha_ema * sample + (1.0 - alpha_ema) * previous


def ema_alpha_from_tau(tau_ema: float, dt: float) -> float:
    """Smoothing factor with time constant ``tau_ema``: ``1 - exp(-dt / tau)``."""
    if tau_ema <= 0 or dt <= 0:
        raise ValueError("tau_ema and dt must be positive")
    return -math.expm1(-dt / tau_ema)


def comp_alpha_from_tau(tau: float, dt: float) -> float:
    """Complementary weight for time constant ``tau``: ``tau / (tau + dt)``."""
    if tau <= 0 or dt <= 0:
        raise ValueError("tau and dt must be positive")
    return tau / (tau + dt)


def comp_tau_from_alpha(alpha: float, dt: float) -> float:
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha!r}")
    return alpha * dt / (1.0 - alpha)


def calibrate_biases(readings: Sequence[ImuReading], min_window: float = 1.0) -> SensorBiases:
    """Average a stationary, level recording into sensor biases.

    Gyro biases are the per-axis mean rates. Roll and pitch biases are the
    means of the accelerometer-derived angles.
    """
    if len(readings) == 0:
        raise ValueError("empty calibration window")
    span = readings[-1].timestamp - readings[0].timestamp
    if span < min_window - 1e-9:
        raise ValueError(f"calibration window spans {span:.3g} s, need at least {min_window:g} s")
    gyro = np.mean([r.gyro for r in readings], axis=0)
    angles = np.array([accel_to_roll_pitch(r) for r in readings])
    phi_bias, theta_bias = angles.mean(axis=0)
    return SensorBiases(gyro=tuple(gyro.tolist()), phi=float(phi_bias), theta=float(theta_bias))


@dataclass(frozen=True)
class FilterConfig:
    dt: float
    alpha_phi: float = HARDWARE_ALPHA_ROLL_PITCH
    alpha_theta: float = HARDWARE_ALPHA_ROLL_PITCH
    alpha_psi: float = HARDWARE_ALPHA_YAW
    alpha_ema_p: float = HARDWARE_ALPHA_EMA
    alpha_ema_q: float = HARDWARE_ALPHA_EMA
    alpha_ema_r: float = HARDWARE_ALPHA_EMA
    biases: SensorBiases = field(default_factory=SensorBiases)
    # propagate angles with the Euler-rate transform; False integrates body
    # rates directly (small-angle approximation)
    euler_rates: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        for name in ("alpha_phi", "alpha_theta", "alpha_psi"):
            a = getattr(self, name)
            if not 0.0 <= a < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {a!r}")
        for name in ("alpha_ema_p", "alpha_ema_q", "alpha_ema_r"):
            a = getattr(self, name)
            if not 0.0 < a <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {a!r}")

    @classmethod
    def from_pairs(cls, pairs: dict[str, str], dt: float, **overrides) -> "FilterConfig":
        values = {k: float(pairs[k]) for k in FILTER_KEYS if k in pairs}
        values.update(overrides)
        return cls(dt=dt, **values)


class AttitudeFilter:
    """EMA-smoothed gyro propagation fused with accelerometer/magnetometer
    attitude, one instance per control loop."""

    def __init__(self, config: FilterConfig):
        self.config = config
        self.rates: np.ndarray | None = None
        self.angles: tuple[float, float, float] | None = None

    def reset(self) -> None:
        self.rates = None
        self.angles = None

    def absolute(self, reading: ImuReading) -> tuple[float, float, float]:
        b = self.config.biases
        phi, theta = accel_to_roll_pitch(reading)
        phi -= b.phi
        theta -= b.theta
        return phi, theta, mag_to_yaw(reading, phi, theta)

    def update(self, reading: ImuReading) -> tuple[float, float, float]:
        c = self.config
        gyro = reading.gyro - np.asarray(c.biases.gyro)
        if self.rates is None:
            self.rates = gyro
        else:
            alphas = (c.alpha_ema_p, c.alpha_ema_q, c.alpha_ema_r)
            self.rates = np.array([ema_step(prev, s, a) for prev, s, a in zip(self.rates, gyro, alphas)])
        absolute = self.absolute(reading)
        if self.angles is None:
            self.angles = absolute
            return self.angles
        phi, theta, psi = self.angles
        p, q, r = self.rates.tolist()
        if c.euler_rates:
            rates = body_rates_to_euler_rates(State(phi=phi, theta=theta, psi=psi, p=p, q=q, r=r))
        else:
            rates = (p, q, r)
        self.angles = (
            complementary_fuse(absolute[0], phi + rates[0] * c.dt, c.alpha_phi),
            complementary_fuse(absolute[1], theta + rates[1] * c.dt, c.alpha_theta),
            complementary_fuse(absolute[2], wrap_angle(psi + rates[2] * c.dt), c.alpha_psi, wrap=True),
        )
        return self.angles
