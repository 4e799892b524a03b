from __future__ import annotations

import random

import pytest
from hypothesis import HealthCheck, settings

from sovereign_edge.channel import ChannelConfig, ChannelKind
from sovereign_edge.wire import SigningKeypair

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=60
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def keypair(rng):
    return SigningKeypair.generate(rng)


@pytest.fixture
def satellite():
    return ChannelConfig(ChannelKind.SATELLITE_BROADCAST)


# -- acceptance gate reporting ---------------------------------------------
# Tests marked ``@pytest.mark.criterion(n, "title")`` are rolled up into one
# PASS/FAIL line per criterion at the end of the run.

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": True, "tests": 0})
    if report.when == "call":
        entry["tests"] += 1
    if report.failed or (report.when == "call" and report.skipped):
        entry["passed"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        ran = e["tests"] > 0
        mark = "PASS" if e["passed"] and ran else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}  {mark}  {e['title']}")
