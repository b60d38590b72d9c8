import pytest

_LINES = []


def pytest_configure(config):
    config.addinivalue_line("markers", "property: fast invariant checks (acceptance criterion 8)")
    config.addinivalue_line("markers", "slow: long-running regression (minutes)")


@pytest.fixture
def report():
    """record(criterion, label, ok, detail) prints and keeps one pass/fail line."""

    def record(criterion, label, ok, detail=""):
        line = f"[criterion {criterion}] {'PASS' if ok else 'FAIL'} {label}" + (f": {detail}" if detail else "")
        _LINES.append(line)
        print(line)
        return ok

    return record


@pytest.fixture
def note():
    """note(criterion, label, detail) prints a non-gating informational line."""

    def record(criterion, label, detail):
        line = f"[criterion {criterion}] INFO {label}: {detail}"
        _LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
