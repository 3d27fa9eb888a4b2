"""Parameter identification from bench, pendulum, spin-rig and timing data."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean
from typing import Iterable, Sequence

import numpy as np

from quadsim.model import PropellerModel


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class BenchSample:
    """One steady operating point of a propeller on the thrust stand."""

    P: float  # command, counts
    f: float  # thrust, N
    w: float  # rad/s
    V: float  # supply voltage, V
    I: float  # supply current, A

    def __post_init__(self):
        for name in ("f", "w", "V", "I"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)!r}")


@dataclass(frozen=True)
class YawSteadyState:
    tau_applied: float  # N m
    r_ss: float  # rad/s


@dataclass(frozen=True)
class ThrustPwmFit:
    h1: float
    h2: float
    residuals: np.ndarray = field(repr=False)  # thrust-space, N

    @property
    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.residuals ** 2)))


@dataclass(frozen=True)
class DragFit:
    gamma1: float
    gamma2: float
    residuals: np.ndarray = field(repr=False)
    warnings: tuple[str, ...] = ()


def electrical_reaction_torque(V: float, I: float, w: float) -> float:
    """Reaction torque from electrical input power, ``V I / w``.

    Losses are ignored; any surplus over the true reaction torque ends up in
    the identified body drag.
    """
    if w <= 0:
        raise ValueError("angular speed must be positive to infer torque from power")
    return V * I / w


def pendulum_period(M: float, g: float, r: float, J_C: float) -> float:
    """Small-swing period of a compound pendulum with COM inertia ``J_C``."""
    J_P = J_C + M * r * r
    return 2.0 * math.pi * math.sqrt(J_P / (M * g * r))


def moi_from_pendulum(M: float, g: float, r: float, T: float) -> tuple[float, float]:
    """Moments of inertia ``(J_P, J_C)`` about the pivot and about the COM.

    ``r`` is the pivot-to-COM distance and ``T`` the measured swing period.
    """
    if min(M, g, r, T) <= 0:
        raise ValueError("mass, gravity, pivot distance and period must be positive")
    J_P = M * g * r * (T / (2.0 * math.pi)) ** 2
    J_C = J_P - M * r * r
    # a point mass gives J_C = 0 up to rounding
    if J_C < -1e-12 * J_P:
        raise ValueError(
            f"period {T:.6g} s is shorter than the simple-pendulum period "
            f"{2 * math.pi * math.sqrt(r / g):.6g} s; measurement inconsistent"
        )
    return J_P, max(J_C, 0.0)


def period_from_swings(trials: Sequence[Sequence[float]]) -> float:
    """Mean swing period over several filmed trials.

    Each trial lists the timestamps at which consecutive complete swings
    finish; its period is the mean interval, and the trials are averaged.
    """
    if not trials:
        raise ValueError("no trials")
    periods = []
    for i, ts in enumerate(trials):
        ts = np.asarray(ts, dtype=float)
        if ts.size < 2:
            raise ValueError(f"trial {i}: need at least two timestamps")
        if np.any(np.diff(ts) <= 0):
            raise ValueError(f"trial {i}: timestamps must be strictly increasing")
        periods.append((ts[-1] - ts[0]) / (ts.size - 1))
    return fmean(periods)


def disk_moi(m_b: float, r_b: float) -> float:
    return 0.5 * m_b * r_b * r_b


def cylinder_moi(m_m: float, r_m: float) -> float:
    return 0.5 * m_m * r_m * r_m


def propeller_axial_moi(blade: tuple[float, float], motor: tuple[float, float]) -> float:
    """Rotating-assembly inertia: blade as a disk plus rotor as a cylinder.

    ``blade`` and ``motor`` are ``(mass, radius)`` pairs.
    """
    return disk_moi(*blade) + cylinder_moi(*motor)


def mean_propeller_moi(assemblies: Iterable[tuple[tuple[float, float], tuple[float, float]]]) -> float:
    values = [propeller_axial_moi(b, m) for b, m in assemblies]
    if not values:
        raise ValueError("no propeller assemblies")
    return fmean(values)


def _linear_fit(x: np.ndarray, y: np.ndarray, what: str) -> tuple[float, float]:
    if x.size < 2 or np.unique(x).size < 2:
        raise FitError(f"{what}: need at least two distinct abscissae")
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(slope), float(intercept)


def fit_thrust_pwm(samples: Sequence[BenchSample]) -> ThrustPwmFit:
    """Fit ``f = h1 (P - h2)^2`` by a straight line through ``sqrt(f)`` vs ``P``.

    Samples with zero thrust (inside the dead-zone) are ignored.
    """
    used = [s for s in samples if s.f > 0]
    if len(used) < 3:
        raise FitError("thrust-PWM fit needs at least three samples with positive thrust")
    P = np.array([s.P for s in used])
    f = np.array([s.f for s in used])
    a, b = _linear_fit(P, np.sqrt(f), "thrust-PWM fit")
    if a <= 0:
        raise FitError(f"thrust does not grow with command (slope {a:.3g})")
    h1, h2 = a * a, -b / a
    return ThrustPwmFit(h1=h1, h2=h2, residuals=f - h1 * (P - h2) ** 2)


def fit_thrust_omega(samples: Sequence[BenchSample]) -> float:
    """Least-squares ``c1`` in ``f = c1 w^2`` (no intercept)."""
    w2 = np.array([s.w ** 2 for s in samples])
    f = np.array([s.f for s in samples])
    if np.count_nonzero(w2) < 1 or len(samples) < 2:
        raise FitError("thrust-speed fit needs at least two samples with non-zero speed")
    c1 = float(w2 @ f / (w2 @ w2))
    if c1 <= 0:
        raise FitError(f"non-positive thrust coefficient {c1:.3g}")
    return c1


def fit_torque_thrust(samples: Sequence[BenchSample]) -> tuple[float, float]:
    """``(g1, g2)`` in ``tau = g1 f + g2`` with tau from electrical power."""
    used = [s for s in samples if s.w > 0 and s.f > 0]
    f = np.array([s.f for s in used])
    tau = np.array([electrical_reaction_torque(s.V, s.I, s.w) for s in used])
    return _linear_fit(f, tau, "torque-thrust fit")


def fit_propeller(samples: Sequence[BenchSample]) -> PropellerModel:
    pwm = fit_thrust_pwm(samples)
    g1, g2 = fit_torque_thrust(samples)
    return PropellerModel(h1=pwm.h1, h2=pwm.h2, c1=fit_thrust_omega(samples), g1=g1, g2=g2)


def average_models(models: Sequence[PropellerModel]) -> PropellerModel:
    """Coefficient-wise mean of per-propeller fits."""
    if not models:
        raise ValueError("no models to average")
    return PropellerModel(**{k: fmean(getattr(m, k) for m in models) for k in ("h1", "h2", "c1", "g1", "g2")})


def fit_drag_coefficients(points: Sequence[YawSteadyState]) -> DragFit:
    """Fit yaw drag ``|tau| = gamma1 r^2 + gamma2`` to spin-rig steady states.

    A negative intercept is not physical; it is replaced by zero (slope refit
    through the origin) and a warning is attached.
    """
    r2 = np.array([pt.r_ss ** 2 for pt in points], dtype=float)
    tau = np.array([abs(pt.tau_applied) for pt in points], dtype=float)
    if np.any(r2 == 0):
        raise FitError("steady-state yaw rates must be non-zero")
    gamma1, gamma2 = _linear_fit(r2, tau, "drag fit")
    warnings: tuple[str, ...] = ()
    if gamma2 < 0:
        warnings = (f"negative drag offset {gamma2:.3g} N m clamped to zero",)
        gamma2 = 0.0
        gamma1 = float(r2 @ tau / (r2 @ r2))
    if gamma1 <= 0:
        raise FitError(f"non-positive quadratic drag coefficient {gamma1:.3g}")
    return DragFit(gamma1, gamma2, tau - (gamma1 * r2 + gamma2), warnings)


def average_loop_time(t0: float, T1: float, T2: float) -> tuple[float, float]:
    """Average period of a loop of length ``T1`` interrupted every ``t0`` by a
    handler of length ``T2``. Returns ``(T_loop, 1 / T_loop)``.
    """
    if min(t0, T1) <= 0 or T2 < 0:
        raise ValueError("t0 and T1 must be positive, T2 non-negative")
    busy = T1 + T2
    if busy >= t0:
        raise ValueError(f"interrupt starvation: T1 + T2 = {busy:.6g} s >= t0 = {t0:.6g} s")
    T_loop = (t0 * T1 + busy * busy) / (t0 + busy)
    return T_loop, 1.0 / T_loop


def _read_csv(path: str | Path, columns: Sequence[str]) -> list[dict[str, float]]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(row for row in fh if row.strip() and not row.lstrip().startswith("#"))
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in columns if c not in header]
        if missing:
            raise ValueError(f"{path}: missing columns {', '.join(missing)} (have {', '.join(header)})")
        for lineno, row in enumerate(reader, start=2):
            row = {k.strip(): v for k, v in row.items() if k is not None}
            try:
                rows.append({c: float(row[c]) for c in columns})
            except (TypeError, ValueError):
                raise ValueError(f"{path}: row {lineno}: non-numeric value") from None
    return rows


def read_bench_csv(path: str | Path) -> list[BenchSample]:
    return [BenchSample(**row) for row in _read_csv(path, ("P", "f", "w", "V", "I"))]


def write_bench_csv(path: str | Path, samples: Iterable[BenchSample]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["P", "f", "w", "V", "I"])
        for s in samples:
            out.writerow([repr(float(v)) for v in (s.P, s.f, s.w, s.V, s.I)])


def read_yaw_csv(path: str | Path) -> list[YawSteadyState]:
    return [YawSteadyState(row["tau"], row["r"]) for row in _read_csv(path, ("tau", "r"))]


def write_yaw_csv(path: str | Path, points: Iterable[YawSteadyState]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["tau", "r"])
        for pt in points:
            out.writerow([repr(float(pt.tau_applied)), repr(float(pt.r_ss))])


def read_swings_csv(path: str | Path) -> list[list[float]]:
    """Swing timestamps grouped by trial from a ``trial,t`` CSV."""
    trials: dict[float, list[float]] = {}
    for row in _read_csv(path, ("trial", "t")):
        trials.setdefault(row["trial"], []).append(row["t"])
    return [trials[k] for k in sorted(trials)]
