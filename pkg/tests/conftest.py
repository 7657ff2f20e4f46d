import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        number, title = marker.args
        prev = _ACCEPTANCE.get(number, (title, True, ""))
        detail = getattr(item, "acceptance_detail", "")
        if not detail and rep.failed:
            detail = "%s failed" % item.name
        detail = "; ".join(d for d in (prev[2], detail) if d)
        _ACCEPTANCE[number] = (title, prev[1] and rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[number]
        line = "criterion %d %s: %s" % (number, "PASS" if ok else "FAIL", title)
        if detail:
            line += " (%s)" % detail
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def report(request):
    """Attach a one-line measurement summary to an acceptance test."""
    def _set(text):
        request.node.acceptance_detail = text
        print(text)
    return _set
