"""Collects the one-line verdicts of the acceptance suite and prints them after the run."""

import pytest

_VERDICTS: dict[int, str] = {}


@pytest.fixture
def verdict(request):
    """Call ``verdict(number, passed, detail)`` once per acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _VERDICTS[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[number])
