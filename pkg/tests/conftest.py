import pytest

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    """Record a PASS/FAIL line for one acceptance criterion."""

    def record(number: int, ok: bool, detail: str = "") -> bool:
        _ACCEPTANCE[number] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
