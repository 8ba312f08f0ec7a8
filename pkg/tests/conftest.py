"""Shared pytest hooks.

test_acceptance.py appends one formatted line per criterion to
CRITERION_LINES; the terminal-summary hook prints them in a dedicated
section so the measured numbers are visible even when everything passes.
"""

CRITERION_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in CRITERION_LINES:
        terminalreporter.write_line(line)
