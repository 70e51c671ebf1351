import logging
import math

import pytest
from hypothesis import HealthCheck, settings

from sphere_she.geometry import build_grid

settings.register_profile("repo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

E2 = math.e**2


@pytest.fixture(autouse=True)
def _quiet_small_time_warnings():
    logging.getLogger("sphere_she.heat_kernel").setLevel(logging.ERROR)
    yield


@pytest.fixture(scope="session")
def grid1():
    return build_grid(2.0, 1)


@pytest.fixture(scope="session")
def grid2():
    return build_grid(E2, 2)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def report_line(capsys):
    """Print one acceptance line immediately and again in the end-of-run summary."""

    def emit(tag: str, passed: bool, detail: str) -> None:
        line = f"{tag} {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        with capsys.disabled():
            print(f"\n{line}")

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
