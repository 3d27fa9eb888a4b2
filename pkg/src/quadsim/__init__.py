"""Quadcopter flight simulation, parameter identification and PID tuning."""

from quadsim.control import SIMULATION_GAINS, HARDWARE_GAINS, ControllerGains, FlightController, PidGains, load_gains
from quadsim.dynamics import state_derivative, step_rk4, integrate_adaptive
from quadsim.harness import ScenarioSpec, load_scenario, run_scenario, write_telemetry
from quadsim.model import DEFAULT_PROPELLER, REFERENCE_AIRFRAME, PropellerModel, QuadcopterParams, State, load_params

__version__ = "0.1.0"

__all__ = [
    "REFERENCE_AIRFRAME", "SIMULATION_GAINS", "HARDWARE_GAINS", "DEFAULT_PROPELLER",
    "QuadcopterParams", "PropellerModel", "State", "PidGains", "ControllerGains", "FlightController",
    "ScenarioSpec", "load_params", "load_gains", "load_scenario", "run_scenario", "write_telemetry",
    "state_derivative", "step_rk4", "integrate_adaptive",
]
