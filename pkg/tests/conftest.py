import pytest

# criterion number -> (passed, detail); filled by test_acceptance
CRITERIA: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def criterion(request):
    """Record and print one pass/fail line for an acceptance criterion."""

    def record(n: int, ok: bool, detail: str) -> None:
        CRITERIA[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")

    return record
