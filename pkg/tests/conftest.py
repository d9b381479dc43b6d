import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


class CriterionLog:
    """Collects one PASS/FAIL line per acceptance criterion."""

    def __init__(self):
        self.lines: dict[int, str] = {}

    def record(self, number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        self.lines[number] = line
        # visible immediately even with output capture on
        sys.__stdout__.write(f"\n{line}\n")
        sys.__stdout__.flush()


def pytest_configure(config):
    config._criteria = CriterionLog()


@pytest.fixture(scope="session")
def criteria(request):
    return request.config._criteria


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = getattr(config, "_criteria", None)
    if log and log.lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(log.lines):
            terminalreporter.write_line(log.lines[number])
