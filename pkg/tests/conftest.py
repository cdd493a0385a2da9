import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: _order(s)):
            terminalreporter.write_line(line)


def _order(line):
    key = line.split()[1]
    digits = "".join(ch for ch in key if ch.isdigit())
    return int(digits or 0), key
