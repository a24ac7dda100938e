import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


CRITERIA: dict = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; the assertion still decides the test outcome."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}"
        CRITERIA[number] = line + (f"  [{detail}]" if detail else "")
        print(CRITERIA[number])
        assert ok, CRITERIA[number]

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
