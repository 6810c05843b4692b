import re

import pytest

_CRITERIA: dict[str, str] = {}


def _order(label: str):
    m = re.match(r"(\d+)(.*)", label)
    return (int(m.group(1)), m.group(2))


@pytest.fixture
def criterion():
    """``criterion(label, ok, detail)`` records and prints one PASS/FAIL line, then asserts ``ok``."""

    def record(label, ok: bool, detail: str) -> None:
        label = str(label)
        line = f"criterion {label:>5}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[label] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for label in sorted(_CRITERIA, key=_order):
            terminalreporter.write_line(_CRITERIA[label])
