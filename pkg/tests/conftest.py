import numpy as np
import pytest

from curl_lab.kernels import BACKEND

# PASS/FAIL lines collected by test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_report_header(config):
    return f"curl_lab kernel backend: {BACKEND}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
