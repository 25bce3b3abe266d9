"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""
import pytest

_criteria: dict[str, str] = {}
_outcomes: dict[str, tuple[str, float]] = {}
_notes: dict[str, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): test that decides one acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _criteria[item.nodeid] = mark.args[0]


def pytest_runtest_logreport(report):
    name = _criteria.get(report.nodeid)
    if name is None:
        return
    if report.when == "call" or (report.outcome != "passed" and name not in _outcomes):
        outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _outcomes[name] = (outcome, report.duration)


@pytest.fixture
def note(request):
    """Attach a detail line to this test's criterion in the final summary."""
    name = _criteria.get(request.node.nodeid, request.node.name)
    return lambda line: _notes.setdefault(name, []).append(str(line))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name in dict.fromkeys(_criteria.values()):
        outcome, duration = _outcomes.get(name, ("NOT RUN", 0.0))
        tr.write_line(f"{outcome:<5} {name}  ({duration:.1f} s)")
        for line in _notes.get(name, []):
            tr.write_line(f"        {line}")
