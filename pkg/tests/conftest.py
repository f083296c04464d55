import numpy as np
import pytest
from hypothesis import settings

from koopvd.params import TireParams, VehicleParams

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(scope="session")
def vp():
    return VehicleParams()


@pytest.fixture(scope="session")
def tp():
    return TireParams()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)



_acceptance_outcomes = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if name.startswith("test_criterion_") and (report.when == "call" or report.failed):
        n = int(name.split("_")[2])
        if report.failed or n not in _acceptance_outcomes:
            _acceptance_outcomes[n] = report.outcome


def pytest_terminal_summary(terminalreporter):
    import sys

    if not _acceptance_outcomes:
        return
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", {})
    terminalreporter.section("acceptance criteria")
    for n in range(1, getattr(mod, "N_CRITERIA", 8) + 1):
        if n in results:
            line = results[n]
        elif n in _acceptance_outcomes:
            line = f"criterion {n}: FAIL  (errored before a verdict)"
        else:
            line = f"criterion {n}: NOT RUN"
        terminalreporter.write_line(line)
