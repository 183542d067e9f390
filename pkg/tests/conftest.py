"""Shared fixtures and the acceptance-criterion summary printed after the run."""

import pytest

from helpers import toy_dataset

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": True, "ran": False, "details": []})
    if rep.when == "call" or rep.failed:
        entry["ran"] = entry["ran"] or rep.when == "call"
        entry["passed"] = entry["passed"] and not rep.failed
        if rep.when == "call":
            entry["details"] += [str(v) for k, v in rep.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "PASS" if e["passed"] and e["ran"] else ("FAIL" if e["ran"] or not e["passed"] else "SKIP")
        line = f"criterion {number}: {status}  {e['title']}"
        if e["details"]:
            line += "  [" + "; ".join(e["details"]) + "]"
        terminalreporter.write_line(line)


@pytest.fixture
def toy():
    return toy_dataset
