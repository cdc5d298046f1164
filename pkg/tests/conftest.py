import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one acceptance line, print it and fail the test if it did not pass."""

    def record(number, title, ok, detail=""):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}"
        if detail:
            line += f" ({detail})"
        _VERDICTS.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
