from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from evcs_sim.economics import CostProfile, Tariff  # noqa: E402
from evcs_sim.physics import EvSession, StationConfig, TimeGrid  # noqa: E402
from evcs_sim.profiles import UserProfile  # noqa: E402

FIXTURES = Path(__file__).resolve().parent / "fixtures"

_CRITERIA: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _CRITERIA[number] = (title, "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, verdict, detail = _CRITERIA[number]
        line = f"criterion {number:2d}: {verdict}  {title}"
        terminalreporter.write_line(f"{line}  [{detail}]" if detail else line)


def make_session(**kw) -> EvSession:
    base = dict(
        capacity_kwh=60.0,
        soc_current=0.5,
        soc_target=0.9,
        distance_km=20.0,
        consumption_kwh_per_100km=15.0,
        eta_charge=0.95,
        eta_discharge=0.9,
        arrival_slot=64,
        required_by_slot=96,
        session_id=0,
    )
    base.update(kw)
    return EvSession(**base)


def make_profile(**kw) -> UserProfile:
    cost = dict(
        t_tolerance_hours=2.0,
        delay_coeff_a=2.0,
        delay_exponent_b=1.5,
        degradation_per_kwh=0.3,
        risk_premium=0.4,
        linear_delay_rate=1.0,
    )
    tier = kw.pop("economic_tier", "middle")
    cost.update(kw)
    return UserProfile(tier, 0.5, 0.5, CostProfile(**cost))


@pytest.fixture
def grid() -> TimeGrid:
    return TimeGrid()


@pytest.fixture
def station() -> StationConfig:
    return StationConfig()


@pytest.fixture
def flat_tariff(grid: TimeGrid) -> Tariff:
    return Tariff.flat(grid, incentive=0.0, charge_price=1.0, grid_price=0.7)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES
