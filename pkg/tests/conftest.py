import math

import numpy as np
import pytest

from rtadapt.backstepping import BacksteppingDesign
from rtadapt.identifier import Estimates
from rtadapt.passive import run_passive
from rtadapt.plant import PlantParams
from rtadapt.supervisor import TriggerConfig, run_adaptive

ACCEPTANCE_LINES: list = []


def sine_cubic_profile(x):
    x = np.asarray(x, dtype=float)
    return math.sqrt(2.0) * np.sin(math.pi * x) + x * x - x**3


def record_criterion(number: int, name: str, passed: bool, detail: str):
    line = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def truth11():
    return PlantParams(1.0, 11.0, 1.0)


@pytest.fixture(scope="session")
def regulation_run(truth11):
    """Known-c regulation-triggered run of the headline scenario, with timing."""
    import time
    nominal = BacksteppingDesign()(11.0)
    start = time.perf_counter()
    result = run_adaptive(truth11, sine_cubic_profile, Estimates(0.1, 1.0),
                          TriggerConfig(T=0.05, a=1.0, N_tilde=1), horizon=3.0,
                          known_c=True, nominal=nominal)
    return result, time.perf_counter() - start


@pytest.fixture(scope="session")
def passive_run(truth11):
    import time
    start = time.perf_counter()
    result = run_passive(truth11, sine_cubic_profile, gain_gamma=100.0, theta0=0.1, horizon=3.0)
    return result, time.perf_counter() - start
