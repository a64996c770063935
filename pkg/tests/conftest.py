"""Shared pytest configuration: per-criterion result lines.

Tests marked with @pytest.mark.criterion(n, title) print one summary line
each to the terminal after their call phase, so a full run ends with an
explicit pass/fail roll call of the numbered acceptance checks.
"""

import pytest


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(n, title): numbered end-to-end acceptance check"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    status = "PASS" if report.passed else ("FAIL" if report.failed else "SKIP")
    tr = item.config.pluginmanager.get_plugin("terminalreporter")
    if tr is not None:
        tr.write_line(f"criterion {n} ({title}): {status}")
