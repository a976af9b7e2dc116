import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_criteria = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(number, title, ok, detail)``."""

    def record(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (
            f" ({detail})" if detail else ""
        )
        _criteria.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for line in _criteria:
            terminalreporter.write_line(line)
