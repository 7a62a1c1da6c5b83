import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# acceptance bookkeeping: criterion number -> title, test outcomes, measured values
_TITLES: dict[int, str] = {}
_ITEMS: dict[str, int] = {}
_OUTCOMES: dict[int, list[str]] = {}
_NOTES: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): test belongs to acceptance criterion n")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            n, title = m.args
            _TITLES[n] = title
            _ITEMS[item.nodeid] = n


def pytest_runtest_logreport(report):
    n = _ITEMS.get(report.nodeid)
    if n is None:
        return
    if report.failed:
        _OUTCOMES.setdefault(n, []).append("fail")
    elif report.skipped:
        _OUTCOMES.setdefault(n, []).append("skip")
    elif report.when == "call":
        _OUTCOMES.setdefault(n, []).append("pass")


@pytest.fixture
def measured(request):
    """Attach a measured value to the acceptance summary line of this test's criterion."""
    m = request.node.get_closest_marker("criterion")

    def note(text: str) -> None:
        if m is not None:
            _NOTES.setdefault(m.args[0], []).append(text)

    return note


def pytest_terminal_summary(terminalreporter):
    if not _TITLES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_TITLES):
        outcomes = _OUTCOMES.get(n, [])
        if not outcomes:
            status = "NOT RUN"
        elif "fail" in outcomes:
            status = "FAIL"
        elif "skip" in outcomes:
            status = "SKIP"
        else:
            status = "PASS"
        notes = "; ".join(_NOTES.get(n, []))
        terminalreporter.write_line(f"{status:<7} {n:>2}. {_TITLES[n]}" + (f"  [{notes}]" if notes else ""))
