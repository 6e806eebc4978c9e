import pytest

_LINES = []


@pytest.fixture
def report_criterion():
    """Record one PASS/FAIL line per acceptance criterion, printed at the end of the session."""
    def _report(number, title, passed, detail=""):
        line = f"criterion {number} {'PASS' if passed else 'FAIL'} {title}" + (f": {detail}" if detail else "")
        _LINES.append(line)
        print(line)
        return passed
    return _report


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
