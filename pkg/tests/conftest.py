import contextlib

import pytest

_criterion_lines = []


@pytest.fixture
def criterion():
    """One pass/fail line per wrapped block, echoed after the test run."""

    @contextlib.contextmanager
    def tracker(number, title):
        try:
            yield
        except BaseException:
            _criterion_lines.append(f"criterion {number} ({title}): FAIL")
            raise
        _criterion_lines.append(f"criterion {number} ({title}): PASS")

    return tracker


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_criterion_lines):
            terminalreporter.write_line(line)
