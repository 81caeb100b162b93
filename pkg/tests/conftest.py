"""Collects one PASS/FAIL/SKIP line per acceptance criterion for the terminal summary."""

import pytest

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")
    config.stash[_RESULTS] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
        detail = dict(item.user_properties).get("detail", "")
        item.config.stash[_RESULTS][item.nodeid] = (marker.args[0], item.name, status, detail)


def pytest_terminal_summary(terminalreporter, config):
    rows = config.stash[_RESULTS]
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, status, detail in sorted(rows.values()):
        line = f"criterion {number} {status}: {name}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)
