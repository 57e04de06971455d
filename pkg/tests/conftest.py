import numpy as np
import pytest


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(number, title): acceptance criterion checked by the test")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "call" or rep.failed:
        number, title = mark.args
        status = "PASS" if rep.passed else "FAIL"
        item.config._criteria[number] = f"{status}  criterion {number}: {title} ({rep.duration:.2f} s)"


def pytest_terminal_summary(terminalreporter, config):
    if config._criteria:
        terminalreporter.section("acceptance criteria")
        for number in sorted(config._criteria):
            terminalreporter.write_line(config._criteria[number])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
