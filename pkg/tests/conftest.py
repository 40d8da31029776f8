"""Collects acceptance-criterion outcomes and prints one line per criterion at the end."""

import pytest

_outcomes = {}  # criterion number -> list of (test passed, detail lines)
_details = {}  # test nodeid -> detail lines


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion covered by the test")


@pytest.fixture
def report(request):
    """Record a measured value for the summary line of the test's criterion."""
    lines = _details.setdefault(request.node.nodeid, [])
    return lines.append


def pytest_runtest_logreport(report):
    marker = getattr(report, "_criterion", None)
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes.setdefault(marker, []).append((report.passed, _details.get(report.nodeid, [])))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    rep = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        rep._criterion = mark.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_outcomes):
        runs = _outcomes[n]
        status = "PASS" if all(ok for ok, _ in runs) else "FAIL"
        detail = "; ".join(d for _, lines in runs for d in lines)
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
