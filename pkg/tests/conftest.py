from datetime import datetime, timezone
from decimal import Decimal

import pytest

from airstation.aqi import Pollutant, compute_aqi
from airstation.readings import CompositeReading


def make_reading(seq=1, pm2_5=180, pm10=108, temperature=29.0, humidity=62.0, co="5.27", faults=None):
    co = Decimal(co)
    aqi = compute_aqi({Pollutant.PM2_5: pm2_5, Pollutant.PM10: pm10, Pollutant.CO: co}, clamp=True)
    return CompositeReading(
        seq=seq,
        wall_time=datetime(2024, 5, 1, tzinfo=timezone.utc),
        mono_time=float(seq),
        pm2_5=pm2_5,
        pm10=pm10,
        temperature=temperature,
        humidity=humidity,
        co=co,
        aqi=aqi,
        faults=faults or {},
    )


@pytest.fixture
def sample_reading():
    return make_reading()


# --- acceptance summary ---------------------------------------------------

_acceptance_results: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "_acceptance", None)
    if marker is None:
        return
    number, title = marker
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance_results[number] = (title, "PASS" if report.outcome == "passed" else "FAIL")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("acceptance")
    if marker is not None:
        outcome.get_result()._acceptance = marker.args


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance_results):
        title, verdict = _acceptance_results[number]
        terminalreporter.write_line(f"criterion {number} ({title}): {verdict}")
