import sys
from pathlib import Path

import numpy as np
import pytest

STUBS = Path(__file__).parent / "stubs"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def stub_dir():
    return STUBS


def python_cmd(script):
    return [sys.executable, str(STUBS / script)]


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Record a one-line verdict; all verdicts are echoed in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        lines.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
