import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

_ACCEPTANCE = []


@pytest.fixture
def acceptance_report():
    """Record one pass/fail line per acceptance criterion; printed at session end."""

    def record(number, title, ok, detail):
        _ACCEPTANCE.append((number, title, bool(ok), detail))
        print(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
