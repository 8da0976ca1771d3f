import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

# full acceptance runs at N = 51; SKIBAPATH_TIER=ci switches to N = 11
TIER = os.environ.get("SKIBAPATH_TIER", "full").lower()

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n = mark.args[0]
    entry = _criteria.setdefault(n, {"passed": 0, "failed": 0, "skipped": 0, "names": []})
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        entry[report.outcome] += 1
        if report.outcome != "passed":
            entry["names"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section(f"acceptance criteria (tier: {TIER})")
    for n in sorted(_criteria):
        e = _criteria[n]
        if e["failed"]:
            status = "FAIL"
        elif e["passed"]:
            status = "PASS"
        else:
            status = "SKIP"
        extra = f"  [{', '.join(e['names'])}]" if e["names"] else ""
        terminalreporter.write_line(f"criterion {n}: {status} ({e['passed']} passed, {e['failed']} failed){extra}")
