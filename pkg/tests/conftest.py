"""Collects one pass/fail line per acceptance criterion and prints them at
the end of the session."""

ACCEPTANCE_LINES = {}


def record_acceptance(number, name, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES[number] = f"criterion {number} [{status}] {name}" + (f": {detail}" if detail else "")
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
