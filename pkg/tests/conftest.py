"""Shared pytest plumbing: the acceptance tests register one summary line
per criterion; printing them from a terminal-summary hook keeps the lines
visible under default output capture."""

import pytest

ACCEPTANCE_LINES = []


@pytest.fixture()
def accept():
    return ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
