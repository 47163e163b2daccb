import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_criteria: dict = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    num = int(report.nodeid.rsplit("test_criterion_", 1)[1].split("_", 1)[0])
    detail = dict(report.user_properties).get("detail", "")
    _criteria[num] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        status, detail = _criteria[num]
        terminalreporter.write_line(f"criterion {num:2d}: {status}  {detail}")
