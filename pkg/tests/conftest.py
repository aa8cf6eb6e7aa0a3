import pytest
from hypothesis import HealthCheck, settings

from oscbath.model import ModelParams, PowerLaw

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def unit_power_law():
    return PowerLaw(1.0, 0.0, 1.0)


@pytest.fixture
def unit_params(unit_power_law):
    return ModelParams(theta=1.0, lam=0.3, beta=1.0, form_factor=unit_power_law)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
