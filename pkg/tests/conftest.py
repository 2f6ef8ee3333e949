"""Collects acceptance outcomes and prints one line per criterion at the end of the run."""
from __future__ import annotations

import pytest

_OUTCOMES: dict[int, tuple[bool, str]] = {}


class CriterionLog:
    def record(self, number: int, ok: bool, detail: str) -> None:
        _OUTCOMES[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")


@pytest.fixture(scope="session")
def criteria() -> CriterionLog:
    return CriterionLog()


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_OUTCOMES):
        ok, detail = _OUTCOMES[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
