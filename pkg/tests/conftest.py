import numpy as np
import pytest

from sdinet.tensor import tape


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _clean_tape():
    yield
    tape().clear()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def record(request):
    """Record a one-line pass/fail verdict for an acceptance criterion and
    assert it."""

    def _record(number, ok, detail):
        line = f"[criterion {number}] {'PASS' if ok else 'FAIL'} - {detail}"
        print(line)
        lines = getattr(request.config, "acceptance_lines", [])
        request.config.acceptance_lines = lines + [line]
        assert ok, line

    return _record
