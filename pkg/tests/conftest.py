import time

import pytest


def pytest_addoption(parser):
    parser.addoption("--run-network", action="store_true", default=False,
                     help="run tests that call real remote services")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-network"):
        return
    skip = pytest.mark.skip(reason="needs --run-network")
    for item in items:
        if "network" in item.keywords:
            item.add_marker(skip)


SUITE_BUDGET_S = 60.0
_acceptance: dict[int, tuple[str, str]] = {}
_started: list[float] = []


def pytest_sessionstart(session):
    _started.append(time.perf_counter())


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    number, title = mark.args
    prior = _acceptance.get(number, (title, "PASS"))[1]
    failed = report.failed or (report.when == "setup" and report.skipped)
    if failed or prior == "FAIL":
        _acceptance[number] = (title, "FAIL")
    elif report.when == "call":
        _acceptance[number] = (title, prior)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _acceptance:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_acceptance):
            title, status = _acceptance[number]
            terminalreporter.write_line(f"[{status}] criterion {number:2d}: {title}")
    if _started:
        elapsed = time.perf_counter() - _started[0]
        status = "PASS" if elapsed < SUITE_BUDGET_S else "FAIL"
        terminalreporter.write_line(
            f"[{status}] suite wall time {elapsed:.1f} s (budget {SUITE_BUDGET_S:.0f} s)")


def pytest_sessionfinish(session, exitstatus):
    if _started and time.perf_counter() - _started[0] >= SUITE_BUDGET_S and exitstatus == 0:
        session.exitstatus = 1
