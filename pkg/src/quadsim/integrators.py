"""Fixed-step RK4 and an embedded Dormand-Prince 5(4) integrator.

Both work on plain ``f(t, y) -> dy/dt`` callables over 1-D numpy arrays.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

RHS = Callable[[float, np.ndarray], np.ndarray]


class IntegrationError(RuntimeError):
    pass


class StepSizeUnderflow(IntegrationError):
    pass


def rk4_step(f: RHS, t: float, y: np.ndarray, h: float) -> np.ndarray:
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# Dormand & Prince (1980) tableau, 5th-order propagating solution.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


def _initial_step(f: RHS, t0: float, y0: np.ndarray, f0: np.ndarray, direction: float,
                  rtol: float, atol: float) -> float:
    # Hairer, Norsett & Wanner, Solving ODEs I, sec. II.4
    scale = atol + np.abs(y0) * rtol
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + direction * h0 * f0
    f1 = f(t0 + direction * h0, y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def dopri45(f: RHS, t0: float, y0: np.ndarray, t1: float, rtol: float = 1e-6, atol: float = 1e-9,
            h0: float | None = None, max_steps: int = 1_000_000):
    """Integrate from ``t0`` to ``t1`` with local error control.

    Returns ``(ts, ys, h_next)`` where ``ts``/``ys`` hold every accepted step
    including both endpoints and ``h_next`` is the step size suggested for a
    continuation.
    """
    if rtol <= 0 or atol <= 0:
        raise ValueError("rtol and atol must be positive")
    y = np.asarray(y0, dtype=float).copy()
    t = float(t0)
    ts = [t]
    ys = [y.copy()]
    if t1 == t0:
        return np.array(ts), np.array(ys), h0
    direction = 1.0 if t1 > t0 else -1.0
    k = np.empty((7, y.size))
    k[0] = f(t, y)
    h = abs(h0) if h0 else _initial_step(f, t, y, k[0], direction, rtol, atol)
    steps = 0
    while direction * (t1 - t) > 0:
        if steps >= max_steps:
            raise IntegrationError(f"exceeded {max_steps} steps at t = {t!r}")
        min_h = 16 * np.spacing(max(abs(t), abs(t1)))
        if h < min_h:
            raise StepSizeUnderflow(f"step size underflow at t = {t!r} (h = {h!r})")
        proposed = h
        last = h >= abs(t1 - t)
        if last:
            h = abs(t1 - t)
        dt = direction * h
        for i in range(1, 7):
            dy = np.dot(_A[i], k[:i])
            k[i] = f(t + _C[i] * dt, y + dt * dy)
        y_new = y + dt * np.dot(_B5, k)
        err = dt * np.dot(_E, k)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err_norm = float(np.sqrt(np.mean((err / scale) ** 2)))
        if not np.isfinite(err_norm):
            h *= _MIN_FACTOR
            steps += 1
            continue
        if err_norm <= 1.0:
            t = t1 if last else t + dt
            y = y_new
            ts.append(t)
            ys.append(y.copy())
            k[0] = k[6]  # first-same-as-last
            factor = _MAX_FACTOR if err_norm == 0 else min(_MAX_FACTOR, _SAFETY * err_norm ** -0.2)
            h *= factor
            if last:
                # a step shortened to hit t1 says little about the next segment
                h = max(h, proposed)
        else:
            h *= max(_MIN_FACTOR, _SAFETY * err_norm ** -0.2)
        steps += 1
    return np.array(ts), np.array(ys), h
