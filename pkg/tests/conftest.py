import pytest

_VERDICTS = {}


class Verdicts:
    """Collects one pass/fail line per acceptance criterion."""

    def __init__(self, capsys):
        self.capsys = capsys

    def record(self, number, ok, detail):
        line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS[number] = line
        with self.capsys.disabled():
            print("\n" + line)
        return ok


@pytest.fixture
def verdict(capsys):
    return Verdicts(capsys)


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[k])
