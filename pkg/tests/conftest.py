import pytest

# criterion number -> (passed, one-line detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def record():
    def _record(num: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE[num] = (bool(ok), detail)
        print(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return _record
