"""Money: delay cost, reservation reward, user payoff and station profit."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal, Sequence

import numpy as np

from .errors import DomainError, ScheduleViolation
from .physics import (
    EvSession,
    PowerSchedule,
    StationConfig,
    TimeGrid,
    bounds_for,
    validate_schedule,
)

AccountingMode = Literal["consistent", "literal"]
ACCOUNTING_MODES = ("consistent", "literal")


@dataclass(frozen=True)
class Tariff:
    incentive_per_kwh: float
    user_charge_price: tuple[float, ...]
    grid_price: tuple[float, ...]
    grid_dr_compensation_per_kwh: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "user_charge_price", tuple(float(x) for x in self.user_charge_price))
        object.__setattr__(self, "grid_price", tuple(float(x) for x in self.grid_price))
        if len(self.user_charge_price) != len(self.grid_price):
            raise DomainError("price sequences differ in length")
        if self.incentive_per_kwh < 0 or self.grid_dr_compensation_per_kwh < 0:
            raise DomainError("rates must be non-negative")
        if min(self.user_charge_price + self.grid_price, default=0.0) < 0:
            raise DomainError("prices must be non-negative")

    @classmethod
    def flat(
        cls,
        grid: TimeGrid,
        *,
        incentive: float = 0.0,
        charge_price: float = 1.1,
        grid_price: float = 0.7,
        compensation: float = 0.0,
    ) -> Tariff:
        n = grid.slots_per_day
        return cls(incentive, (charge_price,) * n, (grid_price,) * n, compensation)

    def with_incentive(self, rate: float) -> Tariff:
        return replace(self, incentive_per_kwh=rate)

    def check_grid(self, grid: TimeGrid) -> None:
        if len(self.grid_price) != grid.slots_per_day:
            raise DomainError(f"tariff has {len(self.grid_price)} slots, grid has {grid.slots_per_day}")


@dataclass(frozen=True)
class CostProfile:
    t_tolerance_hours: float
    delay_coeff_a: float
    delay_exponent_b: float
    degradation_per_kwh: float
    risk_premium: float
    linear_delay_rate: float = 0.0

    def __post_init__(self) -> None:
        if self.delay_coeff_a < 0 or self.delay_exponent_b <= 0:
            raise DomainError("need a >= 0 and b > 0")
        if not 0 <= self.risk_premium <= 1:
            raise DomainError("risk_premium must lie in [0, 1]")
        if self.t_tolerance_hours < 0 or self.degradation_per_kwh < 0 or self.linear_delay_rate < 0:
            raise DomainError("tolerance and rates must be non-negative")


def delay_cost(t_delay_hours: float, profile: CostProfile) -> float:
    if t_delay_hours < 0:
        raise DomainError("delay must be non-negative")
    excess = t_delay_hours - profile.t_tolerance_hours
    if excess <= 0:
        return 0.0
    return profile.delay_coeff_a * excess**profile.delay_exponent_b


def degradation_cost(energy_discharged_kwh: float, profile: CostProfile) -> float:
    if energy_discharged_kwh < 0:
        raise DomainError("energy must be non-negative")
    return profile.degradation_per_kwh * energy_discharged_kwh


def min_acceptable_reward(degradation: float, delay: float, risk_premium: float) -> float:
    """Smallest incentive payment that covers the user's costs plus a risk markup."""
    if degradation < 0 or delay < 0:
        raise DomainError("costs must be non-negative")
    if not 0 <= risk_premium <= 1:
        raise DomainError("risk_premium must lie in [0, 1]")
    return (degradation + delay) * (1.0 + risk_premium)


# -- schedule-level accounting ------------------------------------------------


def _energy_terms(schedule: PowerSchedule, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    p = schedule.power_kw
    charged = np.clip(p, 0.0, None) * grid.slot_hours
    discharged = np.clip(-p, 0.0, None) * grid.slot_hours * grid.window_mask()
    return charged, discharged


def efficiency_loss_cost(discharged_kwh: float, eta_discharge: float, profile: CostProfile) -> float:
    return discharged_kwh * (1.0 / eta_discharge - 1.0) * profile.degradation_per_kwh


def user_payoff(
    schedule: PowerSchedule,
    session: EvSession,
    tariff: Tariff,
    profile: CostProfile,
    t_delay_hours: float,
    grid: TimeGrid,
    *,
    station: StationConfig | None = None,
    mode: AccountingMode = "consistent",
) -> float:
    """Net money for the user over the day.

    ``mode="literal"`` prices delay linearly at ``linear_delay_rate``;
    the default prices it with the power-law delay cost.
    """
    violations = validate_schedule(schedule, session, bounds_for(session), station or StationConfig(), grid)
    if violations:
        raise ScheduleViolation(violations)
    tariff.check_grid(grid)
    charged, discharged = _energy_terms(schedule, grid)
    income = tariff.incentive_per_kwh * discharged.sum()
    charging = float(np.dot(charged, tariff.user_charge_price))
    if mode == "literal":
        waiting = profile.linear_delay_rate * t_delay_hours
    elif mode == "consistent":
        waiting = delay_cost(t_delay_hours, profile)
    else:
        raise DomainError(f"unknown accounting mode {mode!r}")
    loss = efficiency_loss_cost(discharged.sum(), session.eta_discharge, profile)
    return float(income - charging - waiting - loss)


def station_profit(
    schedules: Sequence[PowerSchedule],
    sessions: Sequence[EvSession],
    tariff: Tariff,
    grid: TimeGrid,
    mode: AccountingMode = "consistent",
) -> float:
    if mode not in ACCOUNTING_MODES:
        raise DomainError(f"unknown accounting mode {mode!r}")
    if len(schedules) != len(sessions):
        raise DomainError("one session per schedule expected")
    tariff.check_grid(grid)
    user_price = np.asarray(tariff.user_charge_price)
    grid_price = np.asarray(tariff.grid_price)
    charged = np.zeros(grid.slots_per_day)
    discharged = 0.0
    for s in schedules:
        c, d = _energy_terms(s, grid)
        charged += c
        discharged += d.sum()
    if mode == "consistent":
        margin = float(np.dot(charged, user_price - grid_price))
        v2g = discharged * (tariff.grid_dr_compensation_per_kwh - tariff.incentive_per_kwh)
        return margin + v2g
    # the objective's signs taken verbatim, kept for side-by-side reporting
    return float(
        tariff.incentive_per_kwh * discharged - np.dot(charged, user_price) + np.dot(charged, grid_price)
    )
