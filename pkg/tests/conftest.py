import pytest

_RESULTS = {}


@pytest.fixture
def criterion():
    """``criterion(k, ok, detail)`` records one acceptance line for the terminal summary."""
    def record(k, ok, detail=""):
        _RESULTS[k] = (bool(ok), detail)
        print(f"C{k} {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_RESULTS):
        ok, detail = _RESULTS[k]
        terminalreporter.write_line(f"C{k:<2} {'PASS' if ok else 'FAIL'}  {detail}")
