"""Fleet generation, per-session scheduling, single-day runs and incentive sweeps."""

from __future__ import annotations

import heapq
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from .economics import AccountingMode, Tariff, station_profit, user_payoff
from .errors import DomainError, EvcsSimError, InfeasibleDecision, SimulationDefect
from .physics import (
    EvSession,
    PowerSchedule,
    StationConfig,
    TimeGrid,
    aggregate_load,
    bounds_for,
    charge_duration_slots,
    charge_energy_demand,
    discharge_hours,
    parse_clock,
    participation_delay_hours,
    split_energy,
    validate_schedule,
)
from .profiles import (
    BaselineAgent,
    DecisionAgent,
    DecisionContext,
    Mode,
    OfferAssessment,
    ProfileTables,
    RawUserRecord,
    SessionDecision,
    UserProfile,
    assess_offer,
    baseline_decide,
    build_profile,
    decision_problems,
    load_profile_tables,
)

log = logging.getLogger(__name__)

DEFAULT_SEED = 20250101
DEFAULT_INCENTIVE_GRID = tuple(round(0.1 * i, 10) for i in range(16))


@dataclass(frozen=True)
class FleetDistributions:
    arrival_mean_hour: float = 18.0
    arrival_sd_hours: float = 2.0
    arrival_min_hour: float = 6.0
    arrival_max_hour: float = 23.0
    soc_current_range: tuple[float, float] = (0.2, 0.6)
    soc_target: float = 0.9
    capacities_kwh: tuple[float, ...] = (40.0, 60.0, 80.0)
    distance_km_range: tuple[float, float] = (5.0, 60.0)
    consumption_kwh_per_100km: float = 15.0
    eta_charge: float = 0.95
    eta_discharge: float = 0.9
    required_by_hours: float = 12.0
    age_range: tuple[float, float] = (20.0, 70.0)
    income_log_mean: float = 11.5
    income_log_sd: float = 0.6
    genders: tuple[str, ...] = ("female", "male")
    occupations: tuple[str, ...] = (
        "office_worker",
        "engineer",
        "manager",
        "self_employed",
        "ride_hailing_driver",
        "student",
        "retired",
    )

    def check(self) -> None:
        pairs = {
            "soc_current_range": self.soc_current_range,
            "distance_km_range": self.distance_km_range,
            "age_range": self.age_range,
            "arrival_min_hour..arrival_max_hour": (self.arrival_min_hour, self.arrival_max_hour),
        }
        for name, (lo, hi) in pairs.items():
            if lo > hi:
                raise DomainError(f"{name}: lower bound exceeds upper bound")
        if not (0 <= self.arrival_min_hour and self.arrival_max_hour <= 24):
            raise DomainError("arrival hours must lie within the day")
        if not (0 <= self.soc_current_range[0] and self.soc_current_range[1] <= self.soc_target <= 1):
            raise DomainError("soc ranges must satisfy 0 <= soc_current <= soc_target <= 1")
        if not self.capacities_kwh or min(self.capacities_kwh) <= 0:
            raise DomainError("capacities_kwh must be non-empty and positive")
        if self.arrival_sd_hours < 0 or self.income_log_sd < 0 or self.required_by_hours <= 0:
            raise DomainError("spreads must be non-negative and required_by_hours positive")
        if not self.genders or not self.occupations:
            raise DomainError("genders and occupations must be non-empty")


@dataclass(frozen=True)
class LlmSettings:
    model: str = "gpt-4"
    temperature: float = 0.0
    max_rounds: int = 2
    weights: dict[str, float] = field(
        default_factory=lambda: {
            "economics": 1.5,
            "temporal": 1.0,
            "power_systems": 1.5,
            "consumer_behavior": 1.0,
            "comprehensive": 2.0,
        }
    )
    corpus_dir: str | None = None
    top_k: int = 3
    timeout_s: float = 30.0
    max_retries: int = 3
    max_in_flight: int = 5


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = DEFAULT_SEED
    fleet_size: int = 100
    grid: TimeGrid = field(default_factory=TimeGrid)
    station: StationConfig = field(default_factory=StationConfig)
    tariff: Tariff | None = None
    fleet: FleetDistributions = field(default_factory=FleetDistributions)
    profile_tables: ProfileTables = field(default_factory=load_profile_tables)
    agent_kind: str = "baseline"
    accounting_mode: AccountingMode = "consistent"
    llm: LlmSettings = field(default_factory=LlmSettings)

    def __post_init__(self) -> None:
        if self.tariff is None:
            object.__setattr__(self, "tariff", default_tariff(self.grid))
        if self.fleet_size < 0:
            raise DomainError("fleet_size must be non-negative")
        self.tariff.check_grid(self.grid)
        self.fleet.check()

    def with_incentive(self, rate: float) -> ScenarioConfig:
        return replace(self, tariff=self.tariff.with_incentive(rate))


# time-of-use periods: (start, end, grid price); retail adds a flat margin
DEFAULT_GRID_PRICE_PERIODS = (
    ("00:00", "07:00", 0.30),
    ("07:00", "17:00", 0.70),
    ("17:00", "22:00", 1.10),
    ("22:00", "24:00", 0.30),
)
DEFAULT_CHARGING_MARGIN = 0.33
DEFAULT_DR_COMPENSATION = 0.0


def price_curve(periods: Sequence[tuple[str, str, float]], grid: TimeGrid) -> tuple[float, ...]:
    """Expand clock-time price periods into one price per slot. Periods must tile the day."""
    prices: list[float | None] = [None] * grid.slots_per_day
    for start, end, price in periods:
        s, e = parse_clock(start), parse_clock(end)
        if s >= e:
            raise DomainError(f"empty price period {start}-{end}")
        for slot in range(grid.slots_per_day):
            if s <= slot * grid.slot_minutes < e:
                if prices[slot] is not None:
                    raise DomainError(f"price periods overlap at {grid.clock(slot)}")
                prices[slot] = float(price)
    missing = [grid.clock(i) for i, p in enumerate(prices) if p is None]
    if missing:
        raise DomainError(f"price periods leave {missing[0]} uncovered")
    return tuple(prices)  # type: ignore[arg-type]


def default_tariff(
    grid: TimeGrid,
    incentive: float = 0.0,
    *,
    periods: Sequence[tuple[str, str, float]] = DEFAULT_GRID_PRICE_PERIODS,
    margin: float = DEFAULT_CHARGING_MARGIN,
    compensation: float = DEFAULT_DR_COMPENSATION,
) -> Tariff:
    """Time-of-use tariff: the retail charging price is the grid price plus a flat margin."""
    grid_price = price_curve(periods, grid)
    return Tariff(
        incentive_per_kwh=incentive,
        user_charge_price=tuple(p + margin for p in grid_price),
        grid_price=grid_price,
        grid_dr_compensation_per_kwh=compensation,
    )


# -- fleet --------------------------------------------------------------------------


def _draw_arrival_slot(rng: np.random.Generator, dist: FleetDistributions, grid: TimeGrid, latest: int) -> int:
    """Truncated-normal arrival, additionally truncated so charge-only service ends by midnight."""
    lo = math.ceil(dist.arrival_min_hour * 60 / grid.slot_minutes)
    hi = min(int(dist.arrival_max_hour * 60 // grid.slot_minutes), latest)
    if hi < lo:
        return max(0, min(lo, latest))
    for _ in range(10_000):
        hour = rng.normal(dist.arrival_mean_hour, dist.arrival_sd_hours)
        slot = int(math.floor(hour * 60 / grid.slot_minutes))
        if lo <= slot <= hi:
            return slot
    return int(np.clip(round(dist.arrival_mean_hour * 60 / grid.slot_minutes), lo, hi))


def generate_fleet(config: ScenarioConfig) -> list[tuple[EvSession, UserProfile]]:
    dist, grid, station = config.fleet, config.grid, config.station
    rng = np.random.default_rng(config.seed)
    slots_12h = round(dist.required_by_hours * 60 / grid.slot_minutes)
    fleet = []
    for i in range(config.fleet_size):
        capacity = float(dist.capacities_kwh[rng.integers(len(dist.capacities_kwh))])
        soc = float(rng.uniform(*dist.soc_current_range))
        distance = float(rng.uniform(*dist.distance_km_range))
        raw = RawUserRecord(
            age=float(rng.uniform(*dist.age_range)),
            gender=dist.genders[rng.integers(len(dist.genders))],
            occupation=dist.occupations[rng.integers(len(dist.occupations))],
            annual_income=float(rng.lognormal(dist.income_log_mean, dist.income_log_sd)),
        )
        profile_seed = int(rng.integers(2**63))
        demand = charge_energy_demand(dist.soc_target, soc, capacity)
        tau = charge_duration_slots(demand, dist.eta_charge, station.nominal_charge_kw, grid)
        arrival = _draw_arrival_slot(rng, dist, grid, grid.slots_per_day - tau)
        session = EvSession(
            capacity_kwh=capacity,
            soc_current=soc,
            soc_target=dist.soc_target,
            distance_km=distance,
            consumption_kwh_per_100km=dist.consumption_kwh_per_100km,
            eta_charge=dist.eta_charge,
            eta_discharge=dist.eta_discharge,
            arrival_slot=arrival,
            required_by_slot=min(arrival + slots_12h, grid.slots_per_day),
            session_id=i,
        )
        fleet.append((session, build_profile(raw, session, config.profile_tables, profile_seed)))
    return fleet


# -- scheduling ----------------------------------------------------------------------


def _ramp(energy_kwh: float, kw: float, eta: float, grid: TimeGrid) -> list[float]:
    """Station-side powers that move exactly ``energy_kwh`` of battery energy at ``kw``, last slot partial."""
    if energy_kwh <= 0:
        return []
    per_slot = eta * kw * grid.slot_hours
    n = math.ceil(energy_kwh / per_slot - 1e-9)
    residual = energy_kwh - (n - 1) * per_slot
    return [kw] * (n - 1) + [residual / (eta * grid.slot_hours)]


def schedule_session(
    decision: SessionDecision,
    session: EvSession,
    station: StationConfig,
    grid: TimeGrid,
    plug_in_slot: int | None = None,
) -> PowerSchedule:
    """Turn a decision into a per-slot power profile.

    V2G sessions discharge at nominal power from the later of window start and
    plug-in, stop at the window end at the latest, then recharge to target.
    """
    n = grid.slots_per_day
    plug = session.arrival_slot if plug_in_slot is None else plug_in_slot
    deadline = min(session.required_by_slot, n)
    power = np.zeros(n)
    stored = session.stored_kwh
    cursor = max(plug, decision.planned_start_slot)

    if decision.mode is Mode.V2G and decision.discharge_kwh > 0:
        cursor = max(cursor, grid.start_slot)
        room = max(grid.end_slot - cursor, 0) * session.eta_discharge * station.nominal_discharge_kw * grid.slot_hours
        energy = min(decision.discharge_kwh, room)
        out = _ramp(energy, station.nominal_discharge_kw, session.eta_discharge, grid)
        power[cursor : cursor + len(out)] = [-x for x in out]
        cursor += len(out)
        stored -= energy

    need = session.target_kwh - stored
    inflow = _ramp(need, station.nominal_charge_kw, session.eta_charge, grid)
    if cursor + len(inflow) > deadline:
        raise InfeasibleDecision(
            f"session {session.session_id}: charging from {grid.clock(cursor)} needs {len(inflow)} slots, "
            f"deadline {grid.clock(deadline) if deadline < n else '24:00'}"
        )
    power[cursor : cursor + len(inflow)] = inflow
    return PowerSchedule(session.session_id, power)


# -- runs -------------------------------------------------------------------------


@dataclass
class SessionOutcome:
    session: EvSession
    profile: UserProfile
    plug_in_slot: int
    decision: SessionDecision
    schedule: PowerSchedule
    assessment: OfferAssessment
    t_delay_hours: float
    payoff: float
    income: float
    fallback: str | None = None


@dataclass
class SimulationResult:
    grid: TimeGrid
    incentive_per_kwh: float
    fleet_size: int
    outcomes: list[SessionOutcome]
    unserved: list[int]
    charged_kwh: np.ndarray
    discharged_kwh: np.ndarray
    total_load_kw: np.ndarray
    station_profit: float

    @property
    def schedules(self) -> list[PowerSchedule]:
        return [o.schedule for o in self.outcomes]

    @property
    def decisions(self) -> list[SessionDecision]:
        return [o.decision for o in self.outcomes]

    @property
    def participation_count(self) -> int:
        return sum(o.decision.participate for o in self.outcomes)

    @property
    def participation_rate(self) -> float:
        return self.participation_count / self.fleet_size if self.fleet_size else 0.0

    @property
    def total_discharged_kwh(self) -> float:
        return float(self.discharged_kwh.sum())

    @property
    def peak_slot(self) -> int:
        return int(np.argmax(self.total_load_kw)) if len(self.total_load_kw) else 0

    @property
    def peak_load_kw(self) -> float:
        return float(self.total_load_kw[self.peak_slot])

    @property
    def fallbacks(self) -> list[tuple[int, str]]:
        return [(o.session.session_id, o.fallback) for o in self.outcomes if o.fallback]

    def summary(self) -> dict[str, Any]:
        return {
            "incentive_per_kwh": self.incentive_per_kwh,
            "total_discharged_kwh": self.total_discharged_kwh,
            "peak_load_kw": self.peak_load_kw,
            "peak_slot": self.peak_slot,
            "peak_time": self.grid.clock(self.peak_slot),
            "profit": self.station_profit,
            "participation_count": self.participation_count,
            "participation_rate": self.participation_rate,
            "unserved": len(self.unserved),
            "fallbacks": len(self.fallbacks),
        }


def _delay_hours(decision: SessionDecision, schedule: PowerSchedule, plug: int, grid: TimeGrid, session: EvSession, station: StationConfig) -> float:
    if decision.mode is Mode.V2G:
        discharged = float(np.clip(-schedule.power_kw, 0, None).sum()) * grid.slot_hours * session.eta_discharge
        t_dis = discharge_hours(discharged, session.eta_discharge, station.nominal_discharge_kw)
        return participation_delay_hours(plug, grid, t_dis)
    if decision.mode is Mode.DEFERRED_CHARGE:
        return max(decision.planned_start_slot - plug, 0) * grid.slot_hours
    return 0.0


def _fallback(context: DecisionContext, profile: UserProfile, why: str) -> SessionDecision:
    d = baseline_decide(context, profile)
    return replace(d, rationale=f"fallback to baseline ({why}); {d.rationale}")


def run_scenario(
    config: ScenarioConfig,
    agent: DecisionAgent | None = None,
    *,
    fleet: Sequence[tuple[EvSession, UserProfile]] | None = None,
    forecast: Sequence[float] | None = None,
) -> SimulationResult:
    """Simulate one day: arrivals in order, one decision per session, then accounting."""
    agent = agent or BaselineAgent()
    is_baseline = isinstance(agent, BaselineAgent)
    grid, station, tariff = config.grid, config.station, config.tariff
    fleet = list(fleet) if fleet is not None else generate_fleet(config)
    fleet.sort(key=lambda m: (m[0].arrival_slot, m[0].session_id))
    forecast_t = tuple(float(x) for x in forecast) if forecast is not None else None

    points: list[int] | None = [0] * station.charge_points if station.charge_points else None
    outcomes: list[SessionOutcome] = []
    unserved: list[int] = []

    for session, profile in fleet:
        plug = session.arrival_slot
        if points is not None:
            plug = max(plug, points[0])
            demand = session.target_kwh - session.stored_kwh
            tau = charge_duration_slots(demand, session.eta_charge, station.nominal_charge_kw, grid)
            if plug + tau > min(session.required_by_slot, grid.slots_per_day):
                unserved.append(session.session_id)
                continue
        ctx = DecisionContext(session, tariff, grid, plug, station, forecast_t)

        fallback = None
        try:
            decision = agent.decide(ctx, profile)
            fallback = getattr(agent, "last_fallback", None)
            problems = decision_problems(decision, ctx)
            if problems:
                raise InfeasibleDecision("; ".join(problems))
            schedule = schedule_session(decision, session, station, grid, plug)
        except EvcsSimError as exc:
            if is_baseline:
                raise SimulationDefect(f"baseline decision for session {session.session_id} failed: {exc}") from exc
            fallback = f"{type(exc).__name__}: {exc}"
            log.info("session %d: %s", session.session_id, fallback)
            decision = _fallback(ctx, profile, fallback)
            schedule = schedule_session(decision, session, station, grid, plug)

        violations = validate_schedule(schedule, session, bounds_for(session), station, grid)
        if violations:
            detail = "; ".join(str(v) for v in violations[:10])
            raise SimulationDefect(f"session {session.session_id} schedule invalid: {detail}")

        if points is not None:
            active = np.flatnonzero(schedule.power_kw)
            busy_until = int(active[-1]) + 1 if len(active) else plug
            heapq.heapreplace(points, max(busy_until, plug))

        t_delay = _delay_hours(decision, schedule, plug, grid, session, station)
        payoff = user_payoff(
            schedule, session, tariff, profile.cost_profile, t_delay, grid,
            station=station, mode=config.accounting_mode,
        )
        window_out = np.clip(-schedule.power_kw, 0, None).sum() * grid.slot_hours
        outcomes.append(
            SessionOutcome(
                session, profile, plug, decision, schedule, assess_offer(ctx, profile), t_delay, payoff,
                income=float(tariff.incentive_per_kwh * window_out), fallback=fallback,
            )
        )

    schedules = [o.schedule for o in outcomes]
    charged, discharged = split_energy(schedules, grid)
    profit = station_profit(schedules, [o.session for o in outcomes], tariff, grid, config.accounting_mode)
    return SimulationResult(
        grid=grid,
        incentive_per_kwh=tariff.incentive_per_kwh,
        fleet_size=config.fleet_size,
        outcomes=outcomes,
        unserved=unserved,
        charged_kwh=charged,
        discharged_kwh=discharged,
        total_load_kw=aggregate_load(schedules, grid),
        station_profit=profit,
    )


# -- sweeps ---------------------------------------------------------------------------


@dataclass
class SweepResult:
    results: list[SimulationResult]

    @property
    def incentives(self) -> list[float]:
        return [r.incentive_per_kwh for r in self.results]

    def rows(self) -> list[dict[str, Any]]:
        return [
            {
                "incentive": r.incentive_per_kwh,
                "total_discharged_kwh": r.total_discharged_kwh,
                "peak_load_kw": r.peak_load_kw,
                "peak_slot": r.peak_slot,
                "profit": r.station_profit,
                "participation_rate": r.participation_rate,
            }
            for r in self.results
        ]

    def __len__(self) -> int:
        return len(self.results)


def _run_level(config: ScenarioConfig, rate: float, agent, fleet) -> SimulationResult:
    return run_scenario(config.with_incentive(rate), agent, fleet=fleet)


def sweep_incentive(
    config: ScenarioConfig,
    incentive_grid: Sequence[float] = DEFAULT_INCENTIVE_GRID,
    agent: DecisionAgent | None = None,
    *,
    jobs: int = 1,
) -> SweepResult:
    """Re-run the same fleet at each incentive level.

    Agents that read the load forecast get the previous level's load curve, so
    those sweeps run in order; forecast-blind agents may run levels in parallel.
    """
    rates = [float(r) for r in incentive_grid]
    if not rates:
        raise DomainError("incentive grid is empty")
    if any(b <= a for a, b in zip(rates, rates[1:])):
        raise DomainError("incentive grid must be strictly increasing")
    agent = agent or BaselineAgent()
    fleet = generate_fleet(config)

    if getattr(agent, "uses_forecast", False):
        results = []
        forecast = np.zeros(config.grid.slots_per_day)
        for rate in rates:
            res = run_scenario(config.with_incentive(rate), agent, fleet=fleet, forecast=forecast)
            forecast = res.total_load_kw
            results.append(res)
        return SweepResult(results)

    jobs = max(1, min(jobs or (os.cpu_count() or 1), len(rates)))
    if jobs == 1:
        return SweepResult([_run_level(config, r, agent, fleet) for r in rates])
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_run_level, config, r, agent, fleet) for r in rates]
        return SweepResult([f.result() for f in futures])
