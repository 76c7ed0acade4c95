import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record():
    """Collect one acceptance verdict line; the lines are printed in the terminal summary."""
    def _record(criterion: int, passed: bool, detail: str, elapsed: float):
        tag = "PASS" if passed else "FAIL"
        ACCEPTANCE_LINES.append(f"{tag}  criterion {criterion}: {detail} [{elapsed:.1f} s]")
        print(ACCEPTANCE_LINES[-1])
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
