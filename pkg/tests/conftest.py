import time

import pytest

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_grid():
    """Design 1 default grid (100 pulses/cell, default noise) and its runtime."""
    from optiwake import experiments as ex

    t0 = time.perf_counter()
    rep = ex.error_rate_grid(ex.DEFAULT_LUX, ex.DEFAULT_DISTANCES, ex.TrialConfig(pulses=100))
    return rep, time.perf_counter() - t0
