import numpy as np
import pytest

import imuvid.autodiff as ad


@pytest.fixture(autouse=True)
def _debug_checks():
    """Assert finite forward outputs in every test."""
    ad.set_debug_checks(True)
    yield
    ad.set_debug_checks(False)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            if "test_acceptance" in getattr(report, "nodeid", ""):
                status = "PASS" if outcome == "passed" else "FAIL"
                lines.append((report.nodeid.split("::")[-1], status))
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, status in sorted(lines):
            terminalreporter.write_line(f"{status}  {name}")
