import warnings

import pytest

from spectator_rtn.rtp import AsymptoticRegimeWarning

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(autouse=True)
def _quiet_regime():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AsymptoticRegimeWarning)
        yield


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
