import numpy as np
import pytest

from oadtm import autodiff as ad


@pytest.fixture(autouse=True)
def float64_mode():
    """Every test starts in 64-bit precision with an empty tape."""
    ad.set_precision("test")
    ad.reset_tape()
    yield
    ad.set_precision("test")
    ad.reset_tape()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    if report.when == "setup" and report.passed:
        return
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _criteria[number] = (title, "PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, status, detail = _criteria[number]
        line = f"criterion {number} [{status}] {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
