import pytest

ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


@pytest.fixture
def record_acceptance():
    def record(k: int, ok: bool, detail: str):
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE[k] = line
        print(line)
    return record
