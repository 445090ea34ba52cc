from __future__ import annotations

import pytest

_RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    """Store one acceptance outcome; the summary hook prints them in order."""

    def _record(criterion: int, passed: bool, detail: str) -> None:
        _RESULTS[criterion] = (bool(passed), detail)
        print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(_RESULTS):
        passed, detail = _RESULTS[c]
        terminalreporter.write_line(f"criterion {c}: {'PASS' if passed else 'FAIL'}  {detail}")
