import pytest

_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record ``criterion N: PASS|FAIL detail`` and return the boolean."""

    def record(n, ok, detail=""):
        _VERDICTS[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        print(_VERDICTS[n])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[n])
