import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    """Record one acceptance verdict; the lines are repeated in the terminal summary."""

    def _record(number, name, passed, detail):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'} {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
