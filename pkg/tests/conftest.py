import sys
from pathlib import Path

import pytest

# helpers (oracles, gradcheck) live next to the tests
sys.path.insert(0, str(Path(__file__).parent))

_LINES = pytest.StashKey[dict]()


@pytest.fixture
def criterion_report(request):
    """``report(n, ok, detail)`` prints and records one line for criterion ``n``."""
    lines = request.config.stash.setdefault(_LINES, {})

    def report(n, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        lines[n] = line
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
