import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_OUTCOMES = {}
_DETAILS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def report(request):
    """Attach a one-line metrics summary to the current criterion."""
    number = request.node.get_closest_marker("criterion").args[0]

    def write(detail):
        _DETAILS[number] = detail

    return write


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None and (rep.when == "call" or rep.failed):
        _OUTCOMES[mark.args[0]] = rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_OUTCOMES):
        status = "PASS" if _OUTCOMES[n] else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {_DETAILS.get(n, '')}")
