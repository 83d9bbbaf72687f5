import pytest

from acceptance_support import RESULTS, TITLES


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(TITLES):
        if k in RESULTS:
            ok, detail = RESULTS[k]
            terminalreporter.write_line(f"criterion {k:>2} {'PASS' if ok else 'FAIL'}  {TITLES[k]}: {detail}")
        else:
            terminalreporter.write_line(f"criterion {k:>2} NOT RUN  {TITLES[k]}")


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(12345)
