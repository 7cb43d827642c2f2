"""User digital twins: profile generation and the rule-based participation decision."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Protocol, Sequence

import numpy as np

from .economics import CostProfile, Tariff, degradation_cost, delay_cost, min_acceptable_reward
from .errors import DomainError
from .physics import (
    EvSession,
    StationConfig,
    TimeGrid,
    bounds_for,
    charge_duration_slots,
    discharge_hours,
    participation_delay_hours,
)

TIERS = ("low", "middle", "high")


@dataclass(frozen=True)
class ProfileTables:
    income_terciles: tuple[float, float]
    tier_price_sensitivity: dict[str, float]
    occupation_price_adjustment: dict[str, float]
    age_time_sensitivity: tuple[tuple[float, float], ...]  # (max_age, sensitivity), ascending
    degradation_rate_range: dict[str, tuple[float, float]]
    psychology: dict[str, float]

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> ProfileTables:
        bands = tuple(
            sorted((float(b["max_age"]), float(b["time_sensitivity"])) for b in raw["age_time_sensitivity"])
        )
        tables = cls(
            income_terciles=tuple(float(x) for x in raw["income_terciles"]),
            tier_price_sensitivity={k: float(v) for k, v in raw["tier_price_sensitivity"].items()},
            occupation_price_adjustment={k: float(v) for k, v in raw.get("occupation_price_adjustment", {}).items()},
            age_time_sensitivity=bands,
            degradation_rate_range={k: (float(v[0]), float(v[1])) for k, v in raw["degradation_rate_range"].items()},
            psychology={k: float(v) for k, v in raw["psychology"].items()},
        )
        tables.check()
        return tables

    def to_dict(self) -> dict[str, Any]:
        return {
            "income_terciles": list(self.income_terciles),
            "tier_price_sensitivity": dict(self.tier_price_sensitivity),
            "occupation_price_adjustment": dict(self.occupation_price_adjustment),
            "age_time_sensitivity": [
                {"max_age": a, "time_sensitivity": s} for a, s in self.age_time_sensitivity
            ],
            "degradation_rate_range": {k: list(v) for k, v in self.degradation_rate_range.items()},
            "psychology": dict(self.psychology),
        }

    def check(self) -> None:
        lo, hi = self.income_terciles
        if not 0 <= lo <= hi:
            raise DomainError("income_terciles must be ascending and non-negative")
        for tier in TIERS:
            if tier not in self.tier_price_sensitivity or tier not in self.degradation_rate_range:
                raise DomainError(f"tables missing tier {tier!r}")
            a, b = self.degradation_rate_range[tier]
            if not 0 <= a <= b:
                raise DomainError(f"degradation range for {tier!r} must be ordered and non-negative")
        for _, s in self.age_time_sensitivity:
            if not 0 <= s <= 1:
                raise DomainError("time sensitivities must lie in [0, 1]")


def load_profile_tables(path: str | Path | None = None) -> ProfileTables:
    if path is None:
        text = resources.files("evcs_sim.data").joinpath("profile_tables.json").read_text()
    else:
        text = Path(path).read_text()
    return ProfileTables.from_dict(json.loads(text))


@dataclass(frozen=True)
class HistoricalSession:
    arrival_slot: int
    soc: float
    mode: str


@dataclass(frozen=True)
class RawUserRecord:
    age: float | None = None
    gender: str | None = None
    occupation: str | None = None
    annual_income: float | None = None
    historical_sessions: tuple[HistoricalSession, ...] = ()

    def __post_init__(self) -> None:
        if self.age is not None and self.age <= 0:
            raise DomainError("age must be positive")
        if self.annual_income is not None and self.annual_income < 0:
            raise DomainError("income must be non-negative")


@dataclass(frozen=True)
class BasicProfile:
    economic_tier: str
    time_sensitivity: float
    price_sensitivity: float


@dataclass(frozen=True)
class UserProfile:
    economic_tier: str
    time_sensitivity: float
    price_sensitivity: float
    cost_profile: CostProfile

    def __post_init__(self) -> None:
        if self.economic_tier not in TIERS:
            raise DomainError(f"unknown tier {self.economic_tier!r}")
        for name in ("time_sensitivity", "price_sensitivity"):
            if not 0 <= getattr(self, name) <= 1:
                raise DomainError(f"{name} must lie in [0, 1]")


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def generate_basic_profile(raw: RawUserRecord, tables: ProfileTables | None = None) -> BasicProfile:
    """Economic tier from income terciles, price sensitivity from tier and occupation,
    time sensitivity from age band. Missing inputs fall back to the middle of the scale."""
    tables = tables or load_profile_tables()
    if raw.annual_income is None:
        tier = "middle"
    elif raw.annual_income < tables.income_terciles[0]:
        tier = "low"
    elif raw.annual_income < tables.income_terciles[1]:
        tier = "middle"
    else:
        tier = "high"

    if raw.annual_income is None and raw.occupation is None:
        price = 0.5
    else:
        price = tables.tier_price_sensitivity[tier]
        price += tables.occupation_price_adjustment.get(raw.occupation or "", 0.0)

    time_s = 0.5
    if raw.age is not None:
        for max_age, sensitivity in tables.age_time_sensitivity:
            if raw.age < max_age:
                time_s = sensitivity
                break
    return BasicProfile(tier, _clamp01(time_s), _clamp01(price))


def generate_psych_profile(
    basic: BasicProfile,
    session: EvSession | None = None,
    history: Sequence[HistoricalSession] = (),
    tables: ProfileTables | None = None,
    seed: int = 0,
) -> CostProfile:
    """Map sensitivities onto delay tolerance, delay-cost curve and risk premium.

    ``session`` and ``history`` are part of the agent interface so that
    LLM-backed variants can use them; the rule-based mapping does not.
    The degradation rate is a seeded draw from the tier's range.
    """
    tables = tables or load_profile_tables()
    psy = tables.psychology
    lo, hi = tables.degradation_rate_range[basic.economic_tier]
    rate = float(np.random.default_rng(seed).uniform(lo, hi)) if hi > lo else lo
    return CostProfile(
        t_tolerance_hours=psy["max_tolerance_hours"] - psy["tolerance_per_time_sensitivity"] * basic.time_sensitivity,
        delay_coeff_a=psy["delay_coeff_base"] + psy["delay_coeff_per_time_sensitivity"] * basic.time_sensitivity,
        delay_exponent_b=psy["delay_exponent"],
        degradation_per_kwh=rate,
        risk_premium=_clamp01(psy["risk_premium_per_price_sensitivity"] * basic.price_sensitivity),
        linear_delay_rate=psy["linear_delay_rate"],
    )


def build_profile(
    raw: RawUserRecord,
    session: EvSession | None = None,
    tables: ProfileTables | None = None,
    seed: int = 0,
) -> UserProfile:
    tables = tables or load_profile_tables()
    basic = generate_basic_profile(raw, tables)
    cost = generate_psych_profile(basic, session, raw.historical_sessions, tables, seed)
    return UserProfile(basic.economic_tier, basic.time_sensitivity, basic.price_sensitivity, cost)


# -- decisions --------------------------------------------------------------------


class Mode(str, Enum):
    CHARGE_ONLY = "charge_only"
    V2G = "v2g"
    DEFERRED_CHARGE = "deferred_charge"


@dataclass(frozen=True)
class DecisionContext:
    session: EvSession
    tariff: Tariff
    grid: TimeGrid
    current_slot: int
    station: StationConfig = field(default_factory=StationConfig)
    station_load_forecast: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.current_slot < self.grid.slots_per_day:
            raise DomainError("current_slot outside the day")


@dataclass(frozen=True)
class SessionDecision:
    participate: bool
    mode: Mode
    discharge_kwh: float
    planned_start_slot: int
    rationale: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.mode is Mode.V2G and not self.participate:
            raise DomainError("v2g mode requires participate=True")
        if self.discharge_kwh < 0:
            raise DomainError("discharge_kwh must be non-negative")
        if self.mode is not Mode.V2G and self.discharge_kwh != 0:
            raise DomainError("discharge_kwh must be 0 unless mode is v2g")

    def to_dict(self) -> dict[str, Any]:
        return {
            "participate": self.participate,
            "mode": self.mode.value,
            "discharge_kwh": self.discharge_kwh,
            "planned_start_slot": self.planned_start_slot,
            "rationale": self.rationale,
        }


def dischargeable_kwh(session: EvSession) -> float:
    """Battery energy above both the trip reserve and the safety floor."""
    floor = max(session.reserve_kwh, bounds_for(session).e_min)
    return max(0.0, session.stored_kwh - floor)


def decision_problems(decision: SessionDecision, context: DecisionContext) -> list[str]:
    """Type invariants that need the context to check. Empty list means valid."""
    problems = []
    if decision.discharge_kwh > dischargeable_kwh(context.session) + 1e-9:
        problems.append("discharge_kwh exceeds dischargeable energy")
    if decision.planned_start_slot < context.current_slot:
        problems.append("planned_start_slot precedes current_slot")
    if decision.planned_start_slot >= context.grid.slots_per_day:
        problems.append("planned_start_slot outside the day")
    return problems


@dataclass(frozen=True)
class OfferAssessment:
    """Everything the threshold rule looks at, kept for reporting."""

    planned_kwh: float
    start_slot: int
    t_discharge_hours: float
    t_delay_hours: float
    delay_cost: float
    degradation_cost: float
    r_min: float
    income: float
    recharge_fits: bool
    reason: str = ""

    @property
    def attractive(self) -> bool:
        return self.planned_kwh > 0 and self.income > 0 and self.income >= self.r_min


def discharge_slot_count(energy_kwh: float, session: EvSession, station: StationConfig, grid: TimeGrid) -> int:
    per_slot = session.eta_discharge * station.nominal_discharge_kw * grid.slot_hours
    return math.ceil(energy_kwh / per_slot - 1e-9)


def v2g_fits(
    energy_kwh: float, start_slot: int, session: EvSession, station: StationConfig, grid: TimeGrid
) -> bool:
    """Can the session discharge ``energy_kwh`` from ``start_slot`` and still recharge in time?"""
    n_dis = discharge_slot_count(energy_kwh, session, station, grid)
    if start_slot + n_dis > grid.end_slot:
        return False
    recharge = session.target_kwh - (session.stored_kwh - energy_kwh)
    n_chg = charge_duration_slots(max(recharge, 0.0), session.eta_charge, station.nominal_charge_kw, grid)
    return start_slot + n_dis + n_chg <= min(session.required_by_slot, grid.slots_per_day)


def assess_offer(context: DecisionContext, profile: UserProfile) -> OfferAssessment:
    session, grid, station = context.session, context.grid, context.station
    cost = profile.cost_profile
    now = context.current_slot
    start = max(now, grid.start_slot)

    def no_offer(reason: str) -> OfferAssessment:
        return OfferAssessment(0.0, now, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, False, reason)

    if session.charge_only:
        return no_offer("battery below trip reserve")
    if now >= grid.end_slot:
        return no_offer("DR window already closed")
    window_kwh = (grid.end_slot - start) * session.eta_discharge * station.nominal_discharge_kw * grid.slot_hours
    planned = min(dischargeable_kwh(session), window_kwh)
    if planned <= 0:
        return no_offer("nothing dischargeable above the safety floor")

    t_dis = discharge_hours(planned, session.eta_discharge, station.nominal_discharge_kw)
    t_delay = participation_delay_hours(now, grid, t_dis)
    c_delay = delay_cost(t_delay, cost)
    c_deg = degradation_cost(planned, cost)
    r_min = min_acceptable_reward(c_deg, c_delay, cost.risk_premium)
    income = context.tariff.incentive_per_kwh * planned
    fits = v2g_fits(planned, start, session, station, grid)
    return OfferAssessment(planned, start, t_dis, t_delay, c_delay, c_deg, r_min, income, fits)


def baseline_decide(context: DecisionContext, profile: UserProfile) -> SessionDecision:
    now = context.current_slot
    a = assess_offer(context, profile)
    if a.reason:
        return SessionDecision(False, Mode.CHARGE_ONLY, 0.0, now, a.reason)
    if not a.attractive:
        why = f"income {a.income:.3f} below reservation reward {a.r_min:.3f}"
        return SessionDecision(False, Mode.CHARGE_ONLY, 0.0, now, why)
    if not a.recharge_fits:
        return SessionDecision(False, Mode.CHARGE_ONLY, 0.0, now, "recharge would miss the departure deadline")
    why = f"income {a.income:.3f} covers reservation reward {a.r_min:.3f}"
    if a.start_slot > now:
        why += f"; charging deferred to {context.grid.clock(a.start_slot)}"
    return SessionDecision(True, Mode.V2G, a.planned_kwh, a.start_slot, why)


class DecisionAgent(Protocol):
    """``uses_forecast`` agents read the load forecast. An agent may also set a
    ``last_fallback`` attribute to explain that its last answer was the baseline rule."""

    uses_forecast: bool

    def decide(self, context: DecisionContext, profile: UserProfile) -> SessionDecision: ...


class BaselineAgent:
    uses_forecast = False
    name = "baseline"

    def decide(self, context: DecisionContext, profile: UserProfile) -> SessionDecision:
        return baseline_decide(context, profile)
