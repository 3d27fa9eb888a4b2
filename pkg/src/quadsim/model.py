"""Physical parameter and state types shared across the package."""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from quadsim.config import ConfigError, dump_keyvalue, read_keyvalue, to_float

# Standard gravity (m/s^2).
STANDARD_GRAVITY = 9.80665

PARAM_KEYS = ("M", "l", "g", "Jxx", "Jyy", "Jzz", "Jp", "gamma1", "gamma2")
PROPELLER_KEYS = ("h1", "h2", "c1", "g1", "g2")


@dataclass(frozen=True)
class QuadcopterParams:
    """Rigid-body constants of the airframe.

    Inertia is kept as the three axial moments; products of inertia are
    taken as zero for the symmetric cross-configuration frame.
    """

    M: float  # total mass, kg
    l: float  # arm length COM -> motor, m
    g: float  # gravity, m/s^2
    Jxx: float  # kg m^2
    Jyy: float
    Jzz: float
    Jp: float  # propeller + rotor axial MOI, kg m^2
    gamma1: float  # quadratic yaw drag, N m / (rad/s)^2
    gamma2: float  # bearing friction offset, N m

    def replace(self, **changes) -> "QuadcopterParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class PropellerModel:
    """Fitted single-propeller maps (command <-> thrust <-> speed <-> torque).

    ``f = h1 (P - h2)^2``, ``f = c1 w^2``, ``tau = (g1 f + g2) sgn(f)``.
    """

    h1: float  # N / count^2
    h2: float  # dead-zone, counts
    c1: float  # N / (rad/s)^2
    g1: float  # N m / N
    g2: float  # N m

    def replace(self, **changes) -> "PropellerModel":
        return replace(self, **changes)


# Measured airframe constants of the reference build.
REFERENCE_AIRFRAME = QuadcopterParams(
    M=1.645,
    l=0.2475,
    g=STANDARD_GRAVITY,
    Jxx=0.014002764,
    Jyy=0.014267729,
    Jzz=0.029487252,
    Jp=2.66838e-4,
    gamma1=4.86291e-4,
    gamma2=1.22958e-3,
)

# Synthetic propeller coefficients, consistent with an E600-class motor and
# 12" blades. Not measured values; see data/params.txt.
DEFAULT_PROPELLER = PropellerModel(h1=3.0e-4, h2=30.0, c1=1.5e-5, g1=0.0168, g2=0.0012)


STATE_FIELDS = ("phi", "theta", "psi", "p", "q", "r", "x", "y", "z", "vx", "vy", "vz")


@dataclass(frozen=True)
class State:
    """Twelve-component flight state: Euler angles, body rates, inertial
    position and inertial velocity (z up)."""

    phi: float = 0.0
    theta: float = 0.0
    psi: float = 0.0
    p: float = 0.0
    q: float = 0.0
    r: float = 0.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    vz: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, values) -> "State":
        values = [float(v) for v in values]
        if len(values) != len(STATE_FIELDS):
            raise ValueError(f"expected {len(STATE_FIELDS)} values, got {len(values)}")
        return cls(*values)

    def replace(self, **changes) -> "State":
        return replace(self, **changes)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in astuple(self))


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def status(self) -> str:
        if self.errors:
            return "fail"
        return "warn" if self.warnings else "pass"

    @property
    def ok(self) -> bool:
        return not self.errors


def validate_params(p: QuadcopterParams) -> ValidationReport:
    """Check physical plausibility of ``p``.

    Non-positive mass, length, gravity or inertia is an error. A yaw inertia
    above ``Jxx + Jyy`` breaks the planar-body bound; the measured airframe
    itself exceeds it by a few percent, so it is only reported as a warning.
    """
    report = ValidationReport()
    for name in ("M", "l", "g", "Jxx", "Jyy", "Jzz", "Jp"):
        value = getattr(p, name)
        if not math.isfinite(value) or value <= 0:
            report.errors.append(f"{name} must be positive, got {value!r}")
    for name in ("gamma1", "gamma2"):
        value = getattr(p, name)
        if not math.isfinite(value) or value < 0:
            report.errors.append(f"{name} must be non-negative, got {value!r}")
    if not report.errors and p.Jzz > p.Jxx + p.Jyy:
        report.warnings.append(
            f"Jzz = {p.Jzz:.9g} exceeds Jxx + Jyy = {p.Jxx + p.Jyy:.9g} (planar-body bound)"
        )
    return report


def validate_propeller(m: PropellerModel) -> ValidationReport:
    report = ValidationReport()
    for name in ("h1", "c1", "g1"):
        value = getattr(m, name)
        if not math.isfinite(value) or value <= 0:
            report.errors.append(f"{name} must be positive, got {value!r}")
    if not math.isfinite(m.g2) or m.g2 < 0:
        report.errors.append(f"g2 must be non-negative, got {m.g2!r}")
    if not 0 <= m.h2 <= 255:
        report.errors.append(f"h2 must lie in [0, 255], got {m.h2!r}")
    return report


def base_weight(p: QuadcopterParams) -> float:
    """Per-motor share of the hover thrust, ``M g / 4`` (N)."""
    return p.M * p.g / 4.0


def load_params(path: str | Path) -> tuple[QuadcopterParams, PropellerModel]:
    """Read airframe and propeller constants from a parameter file."""
    pairs, _ = read_keyvalue(path)
    src = str(path)
    params = QuadcopterParams(**{k: to_float(pairs, k, src) for k in PARAM_KEYS})
    prop = PropellerModel(**{k: to_float(pairs, k, src) for k in PROPELLER_KEYS})
    for report in (validate_params(params), validate_propeller(prop)):
        if not report.ok:
            raise ConfigError("; ".join(report.errors), path=src)
    return params, prop


def dump_params(params: QuadcopterParams | None = None, prop: PropellerModel | None = None,
                header: str | None = None) -> str:
    pairs: dict[str, object] = {}
    if params is not None:
        pairs.update({f.name: getattr(params, f.name) for f in fields(params)})
    if prop is not None:
        pairs.update({f.name: getattr(prop, f.name) for f in fields(prop)})
    return dump_keyvalue(pairs, header)
