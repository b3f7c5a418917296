import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_CRITERIA = {}


@pytest.fixture(scope="session")
def record_criterion():
    """Record an acceptance criterion outcome for the terminal summary."""
    def record(number: int, passed: bool, detail: str = ""):
        _CRITERIA[number] = (bool(passed), detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, detail = _CRITERIA[number]
        terminalreporter.write_line(
            f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
