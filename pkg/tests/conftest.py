import numpy as np
import pytest

from qubitpmp.model import SystemSpec


@pytest.fixture
def closed():
    return SystemSpec(xi=0.2, channel="none", gamma=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running sweeps")
    config.addinivalue_line("markers", "acceptance(n, text): numbered acceptance criterion")


_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or report.when == "setup" and report.passed:
        return
    n, text = mark.args
    ok = report.passed and _ACCEPTANCE.get(n, (True,))[0]
    if report.when == "call" or not report.passed:
        _ACCEPTANCE[n] = (ok, text)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, text = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}")
