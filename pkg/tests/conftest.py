"""Collects one verdict line per acceptance criterion and prints them after the run."""

import pytest

_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """``verdict(number, name, ok, detail)`` records and prints a criterion line, then asserts ``ok``."""

    def record(number, name: str, ok: bool, detail: str = "") -> None:
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
        _VERDICTS.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
