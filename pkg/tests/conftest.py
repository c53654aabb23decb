import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nlsaddle.core import ScalarField2D, StackedVector

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def scalar_stack(values, name="v"):
    """One-block stack holding a 1x1 field; handy for scalar toy problems."""
    return StackedVector([(name, ScalarField2D(np.array([[float(values)]])))])


# -- acceptance report ----------------------------------------------------------

_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """``criterion(k, ok, detail)`` records a pass/fail line for the final report."""

    def record(k: int, ok: bool, detail: str):
        _CRITERIA[k] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        ok, detail = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
