import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record an acceptance line: criterion(num, title, ok, detail)."""
    def rec(num, title, ok, detail=""):
        _CRITERIA[num] = (title, bool(ok), detail)
        return bool(ok)
    return rec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.write_sep("=", "acceptance criteria")
    for n in range(1, 11):
        if n in _CRITERIA:
            title, ok, detail = _CRITERIA[n]
            tr.write_line(f"{'PASS' if ok else 'FAIL'}  [{n:2d}] {title}: {detail}")
        else:
            tr.write_line(f"FAIL  [{n:2d}] not run")
