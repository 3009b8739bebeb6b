import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vnslab.spectral import Grid3

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid16():
    return Grid3(2 * np.pi, 16)


@pytest.fixture(scope="session")
def grid32():
    return Grid3(2 * np.pi, 32)


def random_real(grid, rng, comps=3):
    shape = (comps,) + (grid.N,) * 3 if comps else (grid.N,) * 3
    return rng.standard_normal(shape)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict = {}


@pytest.fixture(scope="session")
def acceptance_report():
    def report(number: int, title: str, passed: bool, detail: str):
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
