import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def report_criterion():
    """Record (and print) one PASS/FAIL line per acceptance criterion."""

    def record(number: int, title: str, passed: bool, detail: str):
        line = f"CRITERION {number:>2} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
