"""Single-propeller maps among PWM command, thrust, speed and reaction torque."""

from __future__ import annotations

import math
from dataclasses import dataclass

from quadsim.model import PropellerModel

PWM_MAX = 255.0
SCALED_MAX = 40000


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class MotorCommand:
    raw: float  # 0..255 scale, after clamping
    scaled: int  # 0..40000 scale
    clamped: bool = False

    @property
    def effective_raw(self) -> float:
        """Command on the 0..255 scale that the quantized value represents."""
        return self.scaled * PWM_MAX / SCALED_MAX


def sgn(x: float) -> float:
    if x > 0:
        return 1.0
    if x < 0:
        return -1.0
    return 0.0


def pwm_to_thrust(P: float, m: PropellerModel) -> float:
    """Thrust (N) for command ``P`` on the 0..255 scale.

    Commands below the dead-zone ``h2`` idle the motor and give zero thrust.
    """
    if not 0.0 <= P <= PWM_MAX:
        raise DomainError(f"command {P!r} outside [0, {PWM_MAX:g}]")
    if P <= m.h2:
        return 0.0
    d = P - m.h2
    return m.h1 * d * d


def thrust_to_pwm(f: float, m: PropellerModel) -> tuple[float, bool]:
    """Invert the thrust map. Returns ``(P, saturated)``.

    Demands above full scale are clamped to 255 and flagged so the caller can
    tell an infeasible allocation from a feasible one.
    """
    if f < 0 or math.isnan(f):
        raise DomainError(f"thrust must be non-negative, got {f!r}")
    P = m.h2 + math.sqrt(f / m.h1)
    if P > PWM_MAX:
        return PWM_MAX, True
    return P, False


def omega_to_thrust(w: float, m: PropellerModel) -> float:
    if w < 0:
        raise DomainError(f"angular speed must be non-negative, got {w!r}")
    return m.c1 * w * w


def thrust_to_omega(f: float, m: PropellerModel) -> float:
    if f < 0:
        raise DomainError(f"thrust must be non-negative, got {f!r}")
    return math.sqrt(f / m.c1)


def thrust_to_torque(f: float, m: PropellerModel) -> float:
    """Reaction torque magnitude ``(g1 f + g2) sgn(f)``; zero at zero thrust."""
    return (m.g1 * f + m.g2) * sgn(f)


def signed_omega_sum(w1: float, w2: float, w3: float, w4: float) -> float:
    """Net rotor speed with alternating spin senses, ``-w1 + w2 - w3 + w4``."""
    return -w1 + w2 - w3 + w4


def quantize_command(raw: float) -> MotorCommand:
    """Map a 0..255 command onto the 0..40000 output scale."""
    clamped = False
    if math.isnan(raw):
        raise DomainError("command is NaN")
    if raw < 0.0:
        raw, clamped = 0.0, True
    elif raw > PWM_MAX:
        raw, clamped = PWM_MAX, True
    # round half away from zero; Python's round() is banker's rounding
    scaled = int(math.floor(raw * SCALED_MAX / PWM_MAX + 0.5))
    return MotorCommand(raw=raw, scaled=min(scaled, SCALED_MAX), clamped=clamped)


def command_for_thrust(f: float, m: PropellerModel) -> tuple[MotorCommand, bool]:
    """Thrust demand -> quantized motor command, plus the saturation flag."""
    P, saturated = thrust_to_pwm(f, m)
    return quantize_command(P), saturated


def thrust_for_command(cmd: MotorCommand, m: PropellerModel) -> float:
    """Thrust actually produced by a quantized command."""
    return pwm_to_thrust(cmd.effective_raw, m)
