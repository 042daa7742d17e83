import pytest

_LINES = []


@pytest.fixture
def criterion(capsys):
    """Record one PASS/FAIL line; the caller still asserts."""

    def report(number: int, name: str, passed: bool, detail: str, seconds: float):
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {name}: {detail} [{seconds:.1f} s]"
        _LINES.append((number, line))
        with capsys.disabled():
            print("\n" + line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_LINES):
            terminalreporter.write_line(line)
