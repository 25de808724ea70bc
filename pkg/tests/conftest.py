import warnings

import numpy as np
import pytest

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(autouse=True)
def _quiet_compat_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="signal does not vanish")
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per criterion; the lines are printed in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def report(number: int, title: str, ok: bool, detail: str):
        line = f"ACCEPTANCE {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        lines[number] = line
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
