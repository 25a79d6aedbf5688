import pytest

_LOG = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LOG] = []


@pytest.fixture
def acceptance_log(request):
    """List collecting ``(criterion, label, status, detail)`` lines."""
    return request.config.stash[_LOG]


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LOG, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for crit, label, status, detail in sorted(lines, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{status}] {crit} {label}: {detail}")
