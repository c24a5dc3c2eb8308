import pytest

_LINES = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: validation criteria at the stated path counts")


@pytest.fixture
def criterion_line():
    """Record one verdict line for the terminal summary."""
    return _LINES.append


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s[7:9])):
            terminalreporter.write_line(line)
