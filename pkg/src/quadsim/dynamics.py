"""Equations of motion for the quadcopter and their numerical integration.

Frames: inertial z points up, body z along the rotor axes. Propellers 1 and 3
spin opposite to 2 and 4; motor 1 sits on -x, 3 on +x, 2 on +y and 4 on -y
so that thrust differentials map onto roll and pitch torques as

    tau_phi   = l (f2 - f4)
    tau_theta = l (f3 - f1)
    tau_psi   = tau1 - tau2 + tau3 - tau4
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass
from typing import Sequence

import numpy as np

from quadsim.integrators import IntegrationError, dopri45, rk4_step
from quadsim.model import STATE_FIELDS, PropellerModel, QuadcopterParams, State
from quadsim.propeller import sgn, signed_omega_sum, thrust_to_omega, thrust_to_torque

# Distance from +-pi/2 pitch at which the Euler-rate transform is refused.
PITCH_SINGULARITY_MARGIN = 1e-6

Thrusts = Sequence[float]


class SingularAttitude(ArithmeticError):
    pass


@dataclass(frozen=True)
class BodyTorques:
    tau_phi: float = 0.0
    tau_theta: float = 0.0
    tau_psi: float = 0.0


@dataclass(frozen=True)
class StateDerivative:
    """Time derivative of every :class:`State` field, same order."""

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

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)


def drag_torque(r: float, p: QuadcopterParams, bearing: bool = False) -> float:
    """Aerodynamic yaw drag ``(gamma1 r^2 + gamma2) sgn(r)``.

    The constant ``gamma2`` models rotational friction of the test-rig bearing
    and only applies when ``bearing`` is set.
    """
    offset = p.gamma2 if bearing else 0.0
    return (p.gamma1 * r * r + offset) * sgn(r)


def rotational_derivative(s: State, t: BodyTorques, Omega: float, p: QuadcopterParams,
                          bearing: bool = False, flip_q_gyro: bool = False) -> tuple[float, float, float]:
    """Body angular accelerations ``(p_dot, q_dot, r_dot)``.

    Both gyroscopic rotor terms enter with a minus sign. ``flip_q_gyro``
    reverses the sign of the pitch-row term for sensitivity studies.
    """
    gyro_q_sign = 1.0 if flip_q_gyro else -1.0
    p_dot = t.tau_phi / p.Jxx - (p.Jzz - p.Jyy) / p.Jxx * s.q * s.r - p.Jp / p.Jxx * s.q * Omega
    q_dot = (t.tau_theta / p.Jyy - (p.Jxx - p.Jzz) / p.Jyy * s.p * s.r
             + gyro_q_sign * p.Jp / p.Jyy * s.p * Omega)
    r_dot = t.tau_psi / p.Jzz - (p.Jyy - p.Jxx) / p.Jzz * s.p * s.q - drag_torque(s.r, p, bearing) / p.Jzz
    return p_dot, q_dot, r_dot


def translational_derivative(s: State, total_thrust: float, p: QuadcopterParams) -> tuple[float, float, float]:
    """Inertial accelerations under body-axis thrust and gravity (flat Earth).

    The thrust acts along the third column of the ZYX body-to-inertial
    rotation matrix.
    """
    cphi, sphi = math.cos(s.phi), math.sin(s.phi)
    cth, sth = math.cos(s.theta), math.sin(s.theta)
    cpsi, spsi = math.cos(s.psi), math.sin(s.psi)
    a = total_thrust / p.M
    ax = (cpsi * sth * cphi + spsi * sphi) * a
    ay = (spsi * sth * cphi - cpsi * sphi) * a
    az = cphi * cth * a - p.g
    return ax, ay, az


def body_rates_to_euler_rates(s: State) -> tuple[float, float, float]:
    if abs(s.theta) >= math.pi / 2 - PITCH_SINGULARITY_MARGIN:
        raise SingularAttitude(f"pitch {s.theta!r} rad is at the Euler-angle singularity")
    sphi, cphi = math.sin(s.phi), math.cos(s.phi)
    cth = math.cos(s.theta)
    tth = math.tan(s.theta)
    phi_dot = s.p + s.q * sphi * tth + s.r * cphi * tth
    theta_dot = s.q * cphi - s.r * sphi
    psi_dot = (s.q * sphi + s.r * cphi) / cth
    return phi_dot, theta_dot, psi_dot


def body_torques(thrusts: Thrusts, p: QuadcopterParams, pm: PropellerModel) -> BodyTorques:
    f1, f2, f3, f4 = thrusts
    tau_psi = (thrust_to_torque(f1, pm) - thrust_to_torque(f2, pm)
               + thrust_to_torque(f3, pm) - thrust_to_torque(f4, pm))
    return BodyTorques(p.l * (f2 - f4), p.l * (f3 - f1), tau_psi)


def rotor_speed_sum(thrusts: Thrusts, pm: PropellerModel) -> float:
    return signed_omega_sum(*(thrust_to_omega(f, pm) for f in thrusts))


def state_derivative(s: State, thrusts: Thrusts, p: QuadcopterParams, pm: PropellerModel,
                     bearing: bool = False, flip_q_gyro: bool = False) -> StateDerivative:
    """Full 12-state derivative for propeller thrusts ``(f1, f2, f3, f4)``."""
    if any(f < 0 for f in thrusts):
        raise ValueError(f"thrusts must be non-negative, got {tuple(thrusts)!r}")
    torques = body_torques(thrusts, p, pm)
    Omega = rotor_speed_sum(thrusts, pm)
    p_dot, q_dot, r_dot = rotational_derivative(s, torques, Omega, p, bearing, flip_q_gyro)
    ax, ay, az = translational_derivative(s, sum(thrusts), p)
    phi_dot, theta_dot, psi_dot = body_rates_to_euler_rates(s)
    return StateDerivative(phi_dot, theta_dot, psi_dot, p_dot, q_dot, r_dot,
                           s.vx, s.vy, s.vz, ax, ay, az)


def yaw_rig_derivative(d: StateDerivative) -> StateDerivative:
    """Restrict a derivative to pure yaw, as for the airframe on a bearing rig."""
    return StateDerivative(0.0, 0.0, d.psi, 0.0, 0.0, d.r, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def make_rhs(thrusts: Thrusts, p: QuadcopterParams, pm: PropellerModel, bearing: bool = False,
             flip_q_gyro: bool = False, yaw_rig: bool = False):
    """``f(t, y)`` for the integrators with thrusts held constant."""
    thrusts = tuple(float(f) for f in thrusts)
    # thrust-only terms are constant over a zero-order-hold interval
    torques = body_torques(thrusts, p, pm)
    Omega = rotor_speed_sum(thrusts, pm)
    total = sum(thrusts)

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        s = State(*y.tolist())
        p_dot, q_dot, r_dot = rotational_derivative(s, torques, Omega, p, bearing, flip_q_gyro)
        if yaw_rig:
            return np.array([0.0, 0.0, s.r, 0.0, 0.0, r_dot, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        ax, ay, az = translational_derivative(s, total, p)
        phi_dot, theta_dot, psi_dot = body_rates_to_euler_rates(s)
        return np.array([phi_dot, theta_dot, psi_dot, p_dot, q_dot, r_dot,
                         s.vx, s.vy, s.vz, ax, ay, az])

    return rhs


def _check_finite(y: np.ndarray, t: float) -> None:
    if not np.all(np.isfinite(y)):
        raise IntegrationError(f"non-finite state at t = {t!r}")


def step_rk4(s: State, thrusts: Thrusts, dt: float, p: QuadcopterParams, pm: PropellerModel,
             bearing: bool = False, flip_q_gyro: bool = False, yaw_rig: bool = False) -> State:
    """One classical RK4 step with the thrusts held over ``dt``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    rhs = make_rhs(thrusts, p, pm, bearing, flip_q_gyro, yaw_rig)
    y = rk4_step(rhs, 0.0, s.as_array(), dt)
    _check_finite(y, dt)
    return State.from_array(y)


@dataclass
class Trajectory:
    t: np.ndarray  # (n,)
    y: np.ndarray  # (n, 12)
    h_next: float | None = None  # step size suggested for a continuation

    def state(self, i: int) -> State:
        return State.from_array(self.y[i])

    @property
    def final(self) -> State:
        return self.state(-1)

    def column(self, name: str) -> np.ndarray:
        return self.y[:, STATE_FIELDS.index(name)]


def integrate_adaptive(s: State, schedule: Sequence[tuple[float, Thrusts]], t_span: tuple[float, float],
                       p: QuadcopterParams, pm: PropellerModel, rtol: float = 1e-6, atol: float = 1e-9,
                       bearing: bool = False, flip_q_gyro: bool = False, yaw_rig: bool = False,
                       h0: float | None = None) -> Trajectory:
    """Adaptive Dormand-Prince integration under piecewise-constant thrusts.

    ``schedule`` lists ``(t_start, thrusts)`` pairs in time order; each entry
    holds until the next one starts. Steps never straddle a switch time.
    """
    if rtol <= 0 or atol <= 0:
        raise ValueError("rtol and atol must be positive")
    t0, t1 = t_span
    if not schedule:
        raise ValueError("empty thrust schedule")
    starts = [ts for ts, _ in schedule]
    if any(b < a for a, b in zip(starts, starts[1:])):
        raise ValueError("schedule times must be non-decreasing")
    if starts[0] > t0:
        raise ValueError("schedule does not cover the start of the interval")
    ts_all = [np.array([t0])]
    ys_all = [s.as_array()[None, :]]
    y = s.as_array()
    h = h0
    for i, (start, thrusts) in enumerate(schedule):
        end = schedule[i + 1][0] if i + 1 < len(schedule) else t1
        a, b = max(start, t0), min(end, t1)
        if b <= a:
            continue
        rhs = make_rhs(thrusts, p, pm, bearing, flip_q_gyro, yaw_rig)
        ts, ys, h = dopri45(rhs, a, y, b, rtol=rtol, atol=atol, h0=h)
        _check_finite(ys[-1], b)
        ts_all.append(ts[1:])
        ys_all.append(ys[1:])
        y = ys[-1]
    return Trajectory(np.concatenate(ts_all), np.vstack(ys_all), h)
