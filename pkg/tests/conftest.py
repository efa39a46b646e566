"""Shared pytest hooks for the test suite."""

import sys


def pytest_terminal_summary(terminalreporter):
    """Replay acceptance pass/fail lines after output capture ends."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "_REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
