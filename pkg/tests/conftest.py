import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fosls.fespace import LagrangeSpace, RTSpace
from fosls.mesh import generate_unit_square

settings.register_profile(
    "fosls", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("fosls")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def square4():
    return generate_unit_square(4)


@pytest.fixture
def spaces4(square4):
    return RTSpace(square4), LagrangeSpace(square4)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Print a PASS/FAIL line for an acceptance criterion and remember it for the summary."""

    def report(number: int, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        print(line, flush=True)
        _ACCEPTANCE_LINES.append(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
