import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_CRITERIA: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line; printed again in the terminal summary."""

    def record(number: int, name: str, passed: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {name}: {detail}"
        print(line)
        _CRITERIA.append(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
