from pathlib import Path

import pytest

from beamtune.config import bundled_path
from beamtune.lattice import preprocess, read_lattice
from beamtune.tracking import BunchGenParams

GOLDEN = Path(__file__).parent / "golden"
DESK_SIGMA = (2e-3, 1.8e-3, 2e-3, 1.8e-3, 1e-3)


@pytest.fixture(scope="session")
def desk_path():
    return bundled_path("desk.lte")


@pytest.fixture(scope="session")
def desk(desk_path):
    return read_lattice(desk_path)


@pytest.fixture(scope="session")
def desk_pre(desk):
    return preprocess(desk)


@pytest.fixture(scope="session")
def desk_bunch():
    return BunchGenParams(1000, DESK_SIGMA, seed=0)


# -- acceptance summary ------------------------------------------------------

_ACCEPTANCE: dict[int, tuple[str, str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): one acceptance criterion")


def pytest_runtest_logreport(report):
    marker = getattr(report, "_acceptance", None)
    if marker is None:
        return
    number, title = marker
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE[number] = (title, report.outcome, report.duration)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = item.get_closest_marker("acceptance")
    if m is not None:
        report._acceptance = tuple(m.args)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, outcome, duration = _ACCEPTANCE[number]
        word = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{word}] criterion {number}: {title} ({duration:.1f} s)")
