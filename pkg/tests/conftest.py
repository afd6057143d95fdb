import numpy as np
import pytest

from rhdlab.model import reference_params


@pytest.fixture
def p1():
    return reference_params(1.0)


@pytest.fixture
def p0():
    return reference_params(0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash[_ACCEPTANCE]

    def _report(label, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} criterion {label}: {detail}".rstrip(": ")
        print(line)
        lines.append(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
