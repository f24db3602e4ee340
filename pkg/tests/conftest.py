import numpy as np
import pytest

from aoisched import SystemConfig, half_power_probs

ACCEPTANCE_LINES = []


@pytest.fixture
def small_config():
    return SystemConfig(3, 3, [0.5, 1.0, 2.0], half_power_probs(3, 3), horizon=3000, warmup=1000)


@pytest.fixture
def paper_config():
    return SystemConfig(20, 20, 0.5, half_power_probs(20, 20))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
