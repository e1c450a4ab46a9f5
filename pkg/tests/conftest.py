"""Shared pytest wiring: surfaces acceptance verdicts in the run summary."""

import re

_ACCEPTANCE_LINES: list[str] = []
_SEEN: set[int] = set()


def record_acceptance(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)
    match = re.match(r"ACCEPTANCE (\d+):", line)
    if match:
        _SEEN.add(int(match.group(1)))


def pytest_runtest_logreport(report):
    if report.when != "call" or not report.failed:
        return
    match = re.search(r"test_criterion_(\d+)", report.nodeid)
    if match:
        number = int(match.group(1))
        if number not in _SEEN:
            _SEEN.add(number)
            _ACCEPTANCE_LINES.append(f"ACCEPTANCE {number}: FAIL - see {report.nodeid}")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_ACCEPTANCE_LINES,
                       key=lambda s: int(re.match(r"ACCEPTANCE (\d+)", s).group(1))):
        terminalreporter.write_line(line)
