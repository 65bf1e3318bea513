import os
import socket
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

if os.environ.get("RADJUDGE_BLOCK_NETWORK") == "1":
    def _blocked(*args, **kwargs):
        raise OSError("network access is disabled for this test run")

    socket.socket.connect = _blocked
    socket.socket.connect_ex = _blocked
    socket.create_connection = _blocked

_CRITERIA: dict[int, tuple[str, str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed
    previous = _CRITERIA.get(number)
    if report.when == "call" or failed:
        status = "FAIL" if failed or (previous and previous[1] == "FAIL") else "PASS"
        duration = report.duration + (previous[2] if previous else 0.0)
        _CRITERIA[number] = (title, status, duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, duration = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number} [{status}] {title} ({duration:.2f}s)")
