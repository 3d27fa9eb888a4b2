import functools
from pathlib import Path

import pytest
from hypothesis import settings

from quadsim.cli import data_path
from quadsim.control import load_gains
from quadsim.harness import load_scenario, run_scenario
from quadsim.model import DEFAULT_PROPELLER, REFERENCE_AIRFRAME, load_params

settings.register_profile("quadsim", deadline=None, max_examples=100)
settings.load_profile("quadsim")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def params():
    return REFERENCE_AIRFRAME


@pytest.fixture
def prop():
    return DEFAULT_PROPELLER


@pytest.fixture
def data_dir() -> Path:
    return data_path("")


@functools.lru_cache(maxsize=None)
def shipped_run(name: str):
    """Run a shipped scenario once per session with the shipped params and simulation gains."""
    params, prop = load_params(data_path("params.txt"))
    gains = load_gains(data_path("gains_simulation.txt"))
    spec = load_scenario(data_path(f"scenarios/{name}.txt"))
    return spec, run_scenario(spec, params, gains, prop)


@pytest.fixture
def record_acceptance():
    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} ({detail})"
        print(line)
        ACCEPTANCE_LINES.append(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
