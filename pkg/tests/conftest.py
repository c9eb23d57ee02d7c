import pytest

N_CRITERIA = 11
_lines: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``criterion(n, passed, text)`` records one acceptance line, prints it and asserts."""

    def record(n: int, passed: bool, text: str):
        line = f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {text}"
        _lines[n] = line
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not _lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        terminalreporter.write_line(_lines.get(n, f"criterion {n:2d}: NOT RUN"))
