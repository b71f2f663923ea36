import pytest

_LINES = []


@pytest.fixture
def criterion(request):
    """report(ok, text): print one pass/fail line for an acceptance criterion."""
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def report(ok: bool, text: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {text}"
        _LINES.append(line)
        with capman.global_and_fixture_disabled():
            print("\n" + line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
