"""Shared test plumbing: the acceptance-criteria verdict recorder."""
import pytest

_verdicts = []


@pytest.fixture
def criterion():
    """Record one acceptance verdict line and assert it.

    The line is printed immediately (visible with -s or on failure) and
    replayed in the terminal summary so a plain ``pytest -v`` run ends
    with one pass/fail line per criterion.
    """

    def record(num: int, name: str, tolerance: str, ok: bool, detail: str):
        line = (f"[{'PASS' if ok else 'FAIL'}] criterion {num:02d} {name} "
                f"[tolerance: {tolerance}] {detail}")
        _verdicts.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_verdicts):
            terminalreporter.write_line(line)
