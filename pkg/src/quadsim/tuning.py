"""Automated version of the oscillation-count PID tuning procedure.

For one axis, with the integral gain at zero:

1. raise ``kp`` (with ``kd = 0``) until the step response reaches the
   tolerance band and completes the target number of oscillation periods
   inside the settling window;
2. raise ``kd`` until the response settles inside the window with no
   oscillation beyond a single overshoot.

Both searches grow geometrically and then bisect the bracket.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from quadsim.control import AXES, ControllerGains, PidGains
from quadsim.harness import TOLERANCES, DivergenceError, ScenarioSpec, ScheduleRow, run_scenario, step_metrics
from quadsim.model import PropellerModel, QuadcopterParams

DEFAULT_STEPS = {"z": 2.0, "phi": math.radians(5.0), "theta": math.radians(5.0), "psi": math.radians(30.0)}
# oscillation targets used for the reference airframe
DEFAULT_TARGETS = {"z": 1, "phi": 11, "theta": 11, "psi": 2}

# (t, y) trace of a step response for the given axis gains; None if it diverged
StepSimulator = Callable[[PidGains], "tuple[np.ndarray, np.ndarray] | None"]


class TuningError(RuntimeError):
    pass


@dataclass
class TuneResult:
    axis: str
    gains: PidGains
    cycles: int  # full periods in the window at the chosen kp, kd = 0
    oscillations: int  # count_oscillations of the final response
    settling_time: float | None
    steady_state_error: float
    kp_history: list[tuple[float, int]] = field(default_factory=list)
    kd_history: list[tuple[float, bool]] = field(default_factory=list)


def count_cycles(trace, reference: float, deadband: float = 0.0) -> int:
    """Completed oscillation periods in a step response.

    A period is complete when the error comes back to a turning point on the
    side it started from (the initial sample counts as the first turning
    point).
    """
    e = np.asarray(trace, dtype=float) - reference
    runs: list[tuple[int, int, int]] = []  # (sign, first, last) of excursions beyond the deadband
    for i, v in enumerate(e):
        s = 1 if v > deadband else -1 if v < -deadband else 0
        if s == 0:
            continue
        if runs and runs[-1][0] == s:
            runs[-1] = (s, runs[-1][1], i)
        else:
            runs.append((s, i, i))
    if not runs:
        return 0
    start_sign = runs[0][0]
    cycles = 0
    for s, a, b in runs[1:]:
        if s != start_sign:
            continue
        seg = start_sign * e[a:b + 1]
        # turning point reached inside the run, not just at its end
        if int(np.argmax(seg)) < len(seg) - 1:
            cycles += 1
    return cycles


def quad_step_simulator(axis: str, params: QuadcopterParams, prop: PropellerModel,
                        base: ControllerGains = ControllerGains(), step: float | None = None,
                        duration: float = 4.0, controller_hz: float = 450.0,
                        integrator: str = "rk4") -> StepSimulator:
    """Step-response simulator for one axis of the quadcopter.

    The other axes fly with the gains in ``base`` (zero disables them).
    Sensors are noise-free and the gyro EMA is bypassed.
    """
    if axis not in AXES:
        raise ValueError(f"unknown axis {axis!r}")
    step = DEFAULT_STEPS[axis] if step is None else step
    refs = {"z": 0.0, "phi": 0.0, "theta": 0.0, "psi": 0.0, axis: step}
    row = ScheduleRow(0.0, refs["z"], math.degrees(refs["phi"]), math.degrees(refs["theta"]),
                      math.degrees(refs["psi"]))

    def simulate(g: PidGains):
        spec = ScenarioSpec(duration=duration, controller_hz=controller_hz, schedule=(row,),
                            alpha_ema_p=1.0, alpha_ema_q=1.0, alpha_ema_r=1.0, integrator=integrator)
        try:
            result = run_scenario(spec, params, base.with_axis(axis, g), prop)
        except DivergenceError:
            return None
        trace = result.column(axis)
        if axis == "psi":
            trace = np.unwrap(trace)
        return result.column("t"), trace

    return simulate


def _bisect(lo: float, hi: float, ok: Callable[[float], bool], iters: int) -> float:
    """Smallest value in ``(lo, hi]`` passing ``ok``, given ``ok(hi)`` and not ``ok(lo)``."""
    for _ in range(iters):
        mid = math.sqrt(lo * hi) if lo > 0 else 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def auto_tune_axis(axis: str, target_oscillations: int, simulate: StepSimulator, window: float = 3.0,
                   tolerance: float | None = None, reference: float | None = None,
                   kp_start: float = 0.05, kd_start: float | None = None, growth: float = 1.5,
                   bisect_iters: int = 10, max_expansions: int = 60) -> TuneResult:
    """Tune ``kp`` then ``kd`` for one axis; ``ki`` stays zero.

    ``simulate`` returns the step response for trial gains. ``reference``
    is the commanded value (defaults to the standard step for ``axis``);
    ``tolerance`` is the settling band (1 cm or 0.1 degree by default).
    """
    if target_oscillations < 0:
        raise ValueError("target_oscillations must be >= 0")
    tol = TOLERANCES.get(axis, 0.0) if tolerance is None else tolerance
    ref = DEFAULT_STEPS.get(axis, 1.0) if reference is None else reference
    kp_history: list[tuple[float, int]] = []
    kd_history: list[tuple[float, bool]] = []

    def cycles_at(kp: float) -> int:
        out = simulate(PidGains(kp=kp))
        if out is None:
            n = 1 << 30  # diverged: certainly oscillatory enough
        else:
            t, y = out
            inside = y[t <= window]
            n = count_cycles(inside, ref, tol)
            if not np.any(np.abs(inside - ref) <= tol):
                n = -1  # never reaches the band: too sluggish whatever the count
        kp_history.append((kp, n))
        return n

    def kp_ok(kp: float) -> bool:
        n = cycles_at(kp)
        return n >= 0 and n >= target_oscillations

    kp = kp_start
    if kp_ok(kp):
        kp_final = kp
    else:
        for _ in range(max_expansions):
            lo, kp = kp, kp * growth
            if kp_ok(kp):
                break
        else:
            raise TuningError(f"{axis}: kp search exhausted at kp = {kp:.4g} "
                              f"(history: {kp_history[-5:]})")
        kp_final = _bisect(lo, kp, kp_ok, bisect_iters)
    cycles = max(n for k, n in kp_history if k == kp_final)

    def metrics(kd: float):
        out = simulate(PidGains(kp=kp_final, kd=kd))
        if out is None:
            return None
        t, y = out
        return step_metrics(t, y, 0.0, float(y[0]), ref, tol, axis)

    overdamped = False

    def kd_ok(kd: float) -> bool:
        nonlocal overdamped
        m = metrics(kd)
        passed = (m is not None and m.settling_time is not None and m.settling_time <= window
                  and m.oscillations <= 1 and m.steady_state_error < tol)
        # failing without any oscillation: more damping only slows the response
        overdamped = not passed and m is not None and m.oscillations == 0
        kd_history.append((kd, passed))
        return passed

    if kd_ok(0.0):
        kd_final = 0.0
    else:
        kd = kd_start if kd_start is not None else 0.01 * kp_final
        lo = 0.0
        for _ in range(max_expansions):
            if kd_ok(kd):
                break
            if overdamped:
                raise TuningError(f"{axis}: kp = {kp_final:.4g} is too soft to settle within {window:g} s; "
                                  f"the response is overdamped at kd = {kd:.4g}")
            lo, kd = kd, kd * growth
        else:
            raise TuningError(f"{axis}: kd search exhausted at kd = {kd:.4g} with kp = {kp_final:.4g}; "
                              f"no damping settles the response within {window:g} s")
        kd_final = _bisect(lo, kd, kd_ok, bisect_iters)

    final = metrics(kd_final)
    return TuneResult(axis=axis, gains=PidGains(kp=kp_final, kd=kd_final), cycles=cycles,
                      oscillations=final.oscillations, settling_time=final.settling_time,
                      steady_state_error=final.steady_state_error,
                      kp_history=kp_history, kd_history=kd_history)


def tune_quadcopter_axis(axis: str, params: QuadcopterParams, prop: PropellerModel,
                         base: ControllerGains = ControllerGains(), target_oscillations: int | None = None,
                         window: float = 3.0, step: float | None = None, hold: float = 1.0,
                         controller_hz: float = 450.0) -> TuneResult:
    """Tune one axis of the quadcopter model.

    Follow the usual order: altitude alone, then roll and pitch with the
    altitude loop in ``base``, then yaw with everything else in ``base``.
    """
    target = DEFAULT_TARGETS[axis] if target_oscillations is None else target_oscillations
    step = DEFAULT_STEPS[axis] if step is None else step
    sim = quad_step_simulator(axis, params, prop, base, step, duration=window + hold,
                              controller_hz=controller_hz)
    return auto_tune_axis(axis, target, sim, window=window, reference=step)
