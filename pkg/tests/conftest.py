import math

import numpy as np
import pytest

from fgbridge import gaussian_target

# exp(-x^2/2) against exp(-x^2/4): log r = -0.5 log 2
GAUSS_LOG_R = -0.5 * math.log(2.0)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical or benchmark test")


@pytest.fixture
def gauss_pair():
    return gaussian_target([0.0], [1.0]), gaussian_target([0.0], [2.0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one ``PASS``/``FAIL`` line per acceptance criterion."""

    def record(number, name, ok, detail=""):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
