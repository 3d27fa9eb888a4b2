from conftest import shipped_run
from quadsim.estimation import YawSteadyState, fit_drag_coefficients
from quadsim.model import REFERENCE_AIRFRAME
from quadsim.plotting import plot_actuators, plot_drag_fit, plot_states, telemetry_report

PNG = b"\x89PNG\r\n\x1a\n"


def test_telemetry_report_names(tmp_path):
    spec, result = shipped_run("roll_pos")
    paths = telemetry_report(result.telemetry, tmp_path / "roll.csv", spec)
    assert [p.name for p in paths] == ["roll_states.png", "roll_actuators.png"]
    assert all(p.read_bytes()[:8] == PNG for p in paths)


def test_individual_plots(tmp_path):
    _, result = shipped_run("hover")
    assert plot_states(result.telemetry[:50], tmp_path / "s.png").read_bytes()[:8] == PNG
    assert plot_actuators(result.telemetry[:50], tmp_path / "a.png").read_bytes()[:8] == PNG


def test_drag_fit_plot(tmp_path):
    pts = [YawSteadyState(REFERENCE_AIRFRAME.gamma1 * r * r + REFERENCE_AIRFRAME.gamma2, r) for r in (5.0, 10.0, 15.0)]
    out = plot_drag_fit(pts, fit_drag_coefficients(pts), tmp_path / "drag.png")
    assert out.read_bytes()[:8] == PNG
