"""Shared pytest wiring.

The acceptance tests register one verdict line per criterion; printing them
in the terminal summary keeps them visible even under output capture.
"""

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
