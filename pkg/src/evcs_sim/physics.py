"""Station physics: time grid, sessions, charge/discharge timing and schedule checks.

Power sign convention throughout the package: positive kW charges the
vehicle, negative kW feeds energy back to the grid.  Battery-side energy
moves by ``eta_charge * p * dt`` while charging and by
``eta_discharge * p * dt`` while discharging, which is the rate implied by
the discharge-duration formula (stored energy divided by
``eta_discharge * nominal_discharge_kw``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, GridMismatch, InsufficientEnergy, LengthMismatch

MINUTES_PER_DAY = 1440
ENERGY_TOLERANCE_KWH = 1e-6
_SLACK = 1e-9


def parse_clock(text: str) -> int:
    """'17:30' -> minutes after midnight. '24:00' is accepted as end of day."""
    try:
        hh, mm = text.strip().split(":")
        minutes = int(hh) * 60 + int(mm)
    except (AttributeError, ValueError) as exc:
        raise DomainError(f"bad clock time {text!r}") from exc
    if not 0 <= minutes <= MINUTES_PER_DAY or not 0 <= int(mm) < 60:
        raise DomainError(f"clock time out of range: {text!r}")
    return minutes


def format_clock(minutes: int) -> str:
    return f"{minutes // 60:02d}:{minutes % 60:02d}"


@dataclass(frozen=True)
class TimeGrid:
    """A single simulated day cut into equal slots, with a half-open DR window."""

    slot_minutes: int = 15
    dr_window: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.slot_minutes, int) or self.slot_minutes <= 0:
            raise DomainError("slot_minutes must be a positive integer")
        if MINUTES_PER_DAY % self.slot_minutes:
            raise DomainError(f"slot_minutes={self.slot_minutes} does not divide 1440")
        if self.dr_window is None:
            window = (parse_clock("17:00") // self.slot_minutes, parse_clock("22:00") // self.slot_minutes)
            object.__setattr__(self, "dr_window", window)
        start, end = self.dr_window
        object.__setattr__(self, "dr_window", (int(start), int(end)))
        if not 0 <= start < end <= self.slots_per_day:
            raise DomainError(f"DR window {self.dr_window} outside [0, {self.slots_per_day}]")

    @classmethod
    def from_clock(cls, start: str = "17:00", end: str = "22:00", slot_minutes: int = 15) -> TimeGrid:
        s, e = parse_clock(start), parse_clock(end)
        if s % slot_minutes or e % slot_minutes:
            raise DomainError("DR window edges must fall on slot boundaries")
        return cls(slot_minutes, (s // slot_minutes, e // slot_minutes))

    @property
    def slots_per_day(self) -> int:
        return MINUTES_PER_DAY // self.slot_minutes

    @property
    def slot_hours(self) -> float:
        return self.slot_minutes / 60.0

    @property
    def start_slot(self) -> int:
        return self.dr_window[0]

    @property
    def end_slot(self) -> int:
        return self.dr_window[1]

    def in_window(self, slot: int) -> bool:
        return self.start_slot <= slot < self.end_slot

    def window_mask(self) -> np.ndarray:
        mask = np.zeros(self.slots_per_day, dtype=bool)
        mask[self.start_slot : self.end_slot] = True
        return mask

    def hours_at(self, slot: int) -> float:
        return slot * self.slot_hours

    def clock(self, slot: int) -> str:
        return format_clock(slot * self.slot_minutes)

    def slot_at(self, clock: str) -> int:
        return parse_clock(clock) // self.slot_minutes


def _check_fraction(name: str, value: float, *, open_low: bool = False) -> None:
    low_ok = value > 0 if open_low else value >= 0
    if not (low_ok and value <= 1) or math.isnan(value):
        raise DomainError(f"{name}={value} is not a valid fraction")


@dataclass(frozen=True)
class EvSession:
    capacity_kwh: float
    soc_current: float
    soc_target: float
    distance_km: float
    consumption_kwh_per_100km: float
    eta_charge: float
    eta_discharge: float
    arrival_slot: int
    required_by_slot: int
    session_id: int = 0

    def __post_init__(self) -> None:
        if not self.capacity_kwh > 0:
            raise DomainError("capacity_kwh must be positive")
        _check_fraction("soc_current", self.soc_current)
        _check_fraction("soc_target", self.soc_target)
        _check_fraction("eta_charge", self.eta_charge, open_low=True)
        _check_fraction("eta_discharge", self.eta_discharge, open_low=True)
        if self.soc_target < self.soc_current:
            raise DomainError("soc_target must be >= soc_current")
        if self.distance_km < 0 or self.consumption_kwh_per_100km < 0:
            raise DomainError("distance and consumption must be non-negative")
        if not 0 <= self.arrival_slot < self.required_by_slot:
            raise DomainError("arrival_slot must precede required_by_slot")

    @property
    def stored_kwh(self) -> float:
        return self.soc_current * self.capacity_kwh

    @property
    def target_kwh(self) -> float:
        return self.soc_target * self.capacity_kwh

    @property
    def reserve_kwh(self) -> float:
        return trip_reserve_energy(self.distance_km, self.consumption_kwh_per_100km)

    @property
    def charge_only(self) -> bool:
        """True when the battery cannot even cover the trip reserve."""
        return self.stored_kwh < self.reserve_kwh


@dataclass(frozen=True)
class StationConfig:
    nominal_charge_kw: float = 22.0
    nominal_discharge_kw: float = 15.0
    charge_points: int | None = None  # None means unlimited
    p_max_kw: float = 22.0

    def __post_init__(self) -> None:
        if self.nominal_charge_kw <= 0 or self.nominal_discharge_kw <= 0:
            raise DomainError("nominal powers must be positive")
        if self.nominal_charge_kw > self.p_max_kw or self.nominal_discharge_kw > self.p_max_kw:
            raise DomainError("nominal power exceeds p_max_kw")
        if self.charge_points is not None and self.charge_points <= 0:
            raise DomainError("charge_points must be positive or None (unlimited)")


@dataclass(frozen=True, eq=False)
class PowerSchedule:
    session_id: int
    power_kw: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        arr = np.array(self.power_kw, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "power_kw", arr)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PowerSchedule):
            return NotImplemented
        return self.session_id == other.session_id and np.array_equal(self.power_kw, other.power_kw)

    def __len__(self) -> int:
        return len(self.power_kw)

    @classmethod
    def idle(cls, session_id: int, grid: TimeGrid) -> PowerSchedule:
        return cls(session_id, np.zeros(grid.slots_per_day))


@dataclass(frozen=True)
class EnergyBounds:
    e_current: float
    e_target: float
    e_max: float
    e_min: float

    def __post_init__(self) -> None:
        if not self.e_min - _SLACK <= self.e_current <= self.e_max + _SLACK:
            raise DomainError("e_current outside [e_min, e_max]")
        if not self.e_min - _SLACK <= self.e_target <= self.e_max + _SLACK:
            raise DomainError("e_target outside [e_min, e_max]")


def bounds_for(session: EvSession, min_fraction: float = 0.1) -> EnergyBounds:
    """Energy bounds of a session. The floor never exceeds what is already stored."""
    cap = session.capacity_kwh
    return EnergyBounds(
        e_current=session.stored_kwh,
        e_target=session.target_kwh,
        e_max=cap,
        e_min=min(min_fraction * cap, session.stored_kwh),
    )


# -- formulas -----------------------------------------------------------------


def charge_energy_demand(soc_target: float, soc_current: float, capacity_kwh: float) -> float:
    _check_fraction("soc_target", soc_target)
    _check_fraction("soc_current", soc_current)
    if soc_target < soc_current:
        raise DomainError("soc_target below soc_current")
    if capacity_kwh <= 0:
        raise DomainError("capacity must be positive")
    return (soc_target - soc_current) * capacity_kwh


def charge_duration_slots(energy_kwh: float, eta_charge: float, nominal_kw: float, grid: TimeGrid) -> int:
    """Whole slots needed to put ``energy_kwh`` into the battery at nominal power."""
    if energy_kwh < 0:
        raise DomainError("energy must be non-negative")
    if nominal_kw <= 0:
        raise DomainError("nominal power must be positive")
    _check_fraction("eta_charge", eta_charge, open_low=True)
    slots = energy_kwh / (eta_charge * nominal_kw) / grid.slot_hours
    # guard against 6.0000000001 -> 7 from float noise
    return math.ceil(slots - 1e-9)


def trip_reserve_energy(distance_km: float, consumption_kwh_per_100km: float) -> float:
    if distance_km < 0 or consumption_kwh_per_100km < 0:
        raise DomainError("distance and consumption must be non-negative")
    return distance_km / 100.0 * consumption_kwh_per_100km


def discharge_hours(energy_kwh: float, eta_discharge: float, nominal_discharge_kw: float) -> float:
    """Hours of nominal-power discharge that remove ``energy_kwh`` from the battery."""
    return energy_kwh / (eta_discharge * nominal_discharge_kw)


def discharge_duration_hours(session: EvSession, station: StationConfig) -> float:
    surplus = session.stored_kwh - session.reserve_kwh
    if surplus < -_SLACK:
        raise InsufficientEnergy(
            f"stored {session.stored_kwh:.3f} kWh < trip reserve {session.reserve_kwh:.3f} kWh"
        )
    return discharge_hours(max(surplus, 0.0), session.eta_discharge, station.nominal_discharge_kw)


def participation_delay_hours(t_current: int, grid: TimeGrid, t_discharge: float) -> float:
    """Charging delay caused by joining the DR event at slot ``t_current``.

    Arrivals before the window wait for it to open and then discharge;
    arrivals inside the window only lose the discharge time; after the
    window closes there is nothing to join.
    """
    if t_discharge < 0:
        raise DomainError("t_discharge must be non-negative")
    now = grid.hours_at(t_current)
    start, end = grid.hours_at(grid.start_slot), grid.hours_at(grid.end_slot)
    if now > end:
        return 0.0
    if now < start:
        return t_discharge + (start - now)
    return t_discharge


# -- schedules ------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    constraint: str
    slot: int
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.constraint}@{self.slot}: {self.detail}"


def battery_energy_delta(power_kw: np.ndarray, session: EvSession, grid: TimeGrid) -> np.ndarray:
    """Per-slot change of stored energy for a station-side power profile."""
    eta = np.where(power_kw > 0, session.eta_charge, session.eta_discharge)
    return eta * power_kw * grid.slot_hours


def validate_schedule(
    schedule: PowerSchedule,
    session: EvSession,
    bounds: EnergyBounds,
    station: StationConfig,
    grid: TimeGrid,
    tolerance: float = ENERGY_TOLERANCE_KWH,
) -> list[Violation]:
    p = schedule.power_kw
    if len(p) != grid.slots_per_day:
        raise LengthMismatch(f"schedule has {len(p)} slots, grid has {grid.slots_per_day}")

    out: list[Violation] = []
    running = bounds.e_current + np.cumsum(battery_energy_delta(p, session, grid))
    final = running[-1]
    if abs(final - bounds.e_target) > tolerance:
        out.append(
            Violation("EnergyBalance", len(p) - 1, f"final {final:.6f} kWh != target {bounds.e_target:.6f} kWh")
        )
    for t in np.flatnonzero(running > bounds.e_max + tolerance):
        out.append(Violation("UpperBound", int(t), f"{running[t]:.6f} > {bounds.e_max:.6f} kWh"))
    for t in np.flatnonzero(running < bounds.e_min - tolerance):
        out.append(Violation("LowerBound", int(t), f"{running[t]:.6f} < {bounds.e_min:.6f} kWh"))
    for t in np.flatnonzero(np.abs(p) > station.p_max_kw + _SLACK):
        out.append(Violation("PowerLimit", int(t), f"|{p[t]:.3f}| > {station.p_max_kw} kW"))
    for t in np.flatnonzero((p < 0) & ~grid.window_mask()):
        out.append(Violation("DirectionOutsideWindow", int(t), f"{p[t]:.3f} kW at {grid.clock(int(t))}"))
    return out


def aggregate_load(schedules: Iterable[PowerSchedule], grid: TimeGrid) -> np.ndarray:
    total = np.zeros(grid.slots_per_day)
    for s in schedules:
        if len(s.power_kw) != grid.slots_per_day:
            raise GridMismatch(f"schedule {s.session_id} has {len(s.power_kw)} slots, grid has {grid.slots_per_day}")
        total += s.power_kw
    return total


def split_energy(schedules: Sequence[PowerSchedule], grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Per-slot station-side charged and discharged kWh (both non-negative)."""
    charged = np.zeros(grid.slots_per_day)
    discharged = np.zeros(grid.slots_per_day)
    for s in schedules:
        charged += np.clip(s.power_kw, 0.0, None)
        discharged += np.clip(-s.power_kw, 0.0, None)
    return charged * grid.slot_hours, discharged * grid.slot_hours
