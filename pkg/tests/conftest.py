import pytest

ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def record(request):
    """Store one pass/fail line for the acceptance summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE, {})

    def _record(number: int, name: str, passed: bool, detail: str = "") -> None:
        lines[number] = f"criterion {number:2d} {name:<28s} {'PASS' if passed else 'FAIL'}  {detail}"
        print(lines[number])

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if not lines:
        return
    terminalreporter.section("acceptance")
    for k in sorted(lines):
        terminalreporter.write_line(lines[k])
