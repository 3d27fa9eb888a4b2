"""Matplotlib figures for telemetry and drag fits, written straight to files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from quadsim.estimation import DragFit, YawSteadyState  # noqa: E402
from quadsim.harness import ScenarioSpec, TelemetryRecord  # noqa: E402


def _col(records: Sequence[TelemetryRecord], name: str) -> np.ndarray:
    return np.array([getattr(r, name) for r in records])


def plot_states(records: Sequence[TelemetryRecord], path: str | Path, spec: ScenarioSpec | None = None) -> Path:
    """Altitude and attitude against their references, one panel each."""
    t = _col(records, "t")
    fig, axes = plt.subplots(4, 1, sharex=True, figsize=(8, 9))
    panels = [("z", "altitude [m]", 1.0), ("phi", "roll [deg]", np.degrees(1.0)),
              ("theta", "pitch [deg]", np.degrees(1.0)), ("psi", "yaw [deg]", np.degrees(1.0))]
    for ax, (name, label, scale) in zip(axes, panels):
        true = _col(records, name)
        if name == "psi":
            true = np.unwrap(true)
        ax.plot(t, scale * true, label="true")
        if name != "z":
            filt = _col(records, f"{name}_f")
            ax.plot(t, scale * (np.unwrap(filt) if name == "psi" else filt), lw=0.8, alpha=0.8, label="filtered")
        if spec is not None:
            ref = np.array([getattr(spec.references_at(x), name) for x in t])
            ax.plot(t, scale * ref, "k--", lw=0.8, label="reference")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    axes[1].legend(loc="best", fontsize="small")
    axes[-1].set_xlabel("t [s]")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_actuators(records: Sequence[TelemetryRecord], path: str | Path) -> Path:
    """Per-motor thrusts and the four controller outputs."""
    t = _col(records, "t")
    fig, (top, bottom) = plt.subplots(2, 1, sharex=True, figsize=(8, 6))
    for i in range(1, 5):
        top.plot(t, _col(records, f"f{i}"), label=f"f{i}")
    top.set_ylabel("thrust [N]")
    top.legend(loc="best", fontsize="small", ncol=4)
    for name in ("u_z", "u_phi", "u_theta", "u_psi"):
        bottom.plot(t, _col(records, name), label=name)
    bottom.set_ylabel("controller output [N]")
    bottom.set_xlabel("t [s]")
    bottom.legend(loc="best", fontsize="small", ncol=4)
    for ax in (top, bottom):
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def telemetry_report(records: Sequence[TelemetryRecord], csv_path: str | Path,
                     spec: ScenarioSpec | None = None) -> list[Path]:
    """Write ``<stem>_states.png`` and ``<stem>_actuators.png`` next to ``csv_path``."""
    csv_path = Path(csv_path)
    stem = csv_path.with_suffix("")
    return [plot_states(records, f"{stem}_states.png", spec),
            plot_actuators(records, f"{stem}_actuators.png")]


def plot_drag_fit(points: Sequence[YawSteadyState], fit: DragFit, path: str | Path) -> Path:
    """Measured steady yaw rates against the fitted drag curve."""
    r = np.array([abs(p.r_ss) for p in points])
    tau = np.array([abs(p.tau_applied) for p in points])
    grid = np.linspace(0.0, 1.1 * r.max(), 200)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(r, tau, "o", label="steady states")
    ax.plot(grid, fit.gamma1 * grid ** 2 + fit.gamma2, label="fit")
    ax.set_xlabel("|r| [rad/s]")
    ax.set_ylabel("|torque| [N m]")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
