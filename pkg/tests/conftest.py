import pytest

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_runtest_logreport(report):
    # a criterion whose test raised before recording still gets a line
    name = report.nodeid.rsplit("::", 1)[-1]
    if report.failed and name.startswith("test_criterion_"):
        n = int(name.split("_")[2])
        if n not in ACCEPTANCE:
            msg = str(report.longrepr).strip().splitlines()[-1][:120]
            ACCEPTANCE[n] = (False, f"raised during {report.when}: {msg}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def record_criterion():
    return record
