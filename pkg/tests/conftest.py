"""Shared pytest hooks.

Tests in ``test_acceptance.py`` carry a criterion label as the first line
of their docstring and may attach measured values through the
``measured`` fixture. After the run, one PASS/FAIL line per criterion is
printed in the terminal summary.
"""
import pytest

_LABELS = {}
_VERDICTS = {}


@pytest.fixture
def measured(request):
    """Callable recording a short measurement for the criterion's summary line."""

    def note(text):
        request.node.user_properties.append(("measured", str(text)))

    return note


def pytest_collection_modifyitems(items):
    for item in items:
        if "test_acceptance.py" in item.nodeid:
            doc = (item.function.__doc__ or "").strip().splitlines()
            _LABELS[item.nodeid] = doc[0] if doc else item.name


def pytest_runtest_logreport(report):
    if report.nodeid not in _LABELS:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        notes = [v for k, v in report.user_properties if k == "measured"]
        _VERDICTS[report.nodeid] = (report.outcome, "; ".join(notes))


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in _LABELS:
        if nodeid not in _VERDICTS:
            continue
        outcome, notes = _VERDICTS[nodeid]
        verdict = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        line = f"{verdict}  {_LABELS[nodeid]}"
        if notes:
            line += f"  [{notes}]"
        terminalreporter.write_line(line)
