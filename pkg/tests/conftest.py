import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from satqkd.geometry import OrbitGeometry  # noqa: E402
from satqkd.lossio import generate_synthetic_profile  # noqa: E402


@pytest.fixture(scope="session")
def profile():
    """Zenith pass, 500 km altitude, 30 dB at closest approach, 601 one-second slots."""
    return generate_synthetic_profile(OrbitGeometry(h_sat=500.0), 30.0, 601)


_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    failed = report.failed or (report.when == "setup" and report.skipped)
    prev = _ACCEPTANCE.get(number, (title, True, 0.0))
    _ACCEPTANCE[number] = (title, prev[1] and not failed, prev[2] + report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, secs = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'} ({secs:.1f} s): {title}")
