"""JSON scenario configuration: loading, validation and canonical serialisation.

Every key is optional; omitted keys take the built-in default.  Unknown keys
are rejected so that typos cannot silently fall back to a default.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Callable

from .economics import Tariff
from .engine import (
    DEFAULT_CHARGING_MARGIN,
    DEFAULT_DR_COMPENSATION,
    DEFAULT_GRID_PRICE_PERIODS,
    DEFAULT_INCENTIVE_GRID,
    DEFAULT_SEED,
    FleetDistributions,
    LlmSettings,
    ScenarioConfig,
    default_tariff,
)
from .errors import ConfigError, EvcsSimError, GridSpecError
from .physics import StationConfig, TimeGrid, format_clock
from .profiles import ProfileTables, load_profile_tables

AGENT_KINDS = ("baseline", "llm")
ACCOUNTING_MODES = ("consistent", "literal")


@dataclass(frozen=True)
class TariffSpec:
    """Tariff as written in a config file, before expansion onto a slot grid."""

    incentive_per_kwh: float = 0.0
    grid_price_periods: tuple[tuple[str, str, float], ...] = DEFAULT_GRID_PRICE_PERIODS
    charging_margin: float = DEFAULT_CHARGING_MARGIN
    grid_dr_compensation_per_kwh: float = DEFAULT_DR_COMPENSATION

    def build(self, grid: TimeGrid) -> Tariff:
        return default_tariff(
            grid,
            self.incentive_per_kwh,
            periods=self.grid_price_periods,
            margin=self.charging_margin,
            compensation=self.grid_dr_compensation_per_kwh,
        )


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig
    tariff_spec: TariffSpec
    sweep_grid: tuple[float, ...] = DEFAULT_INCENTIVE_GRID

    def to_dict(self) -> dict[str, Any]:
        """Fully resolved config tree; feeding it back to ``parse_config`` gives an equal config."""
        sc = self.scenario
        start, end = sc.grid.dr_window
        ts = self.tariff_spec
        return {
            "seed": sc.seed,
            "fleet_size": sc.fleet_size,
            "agent": sc.agent_kind,
            "accounting_mode": sc.accounting_mode,
            "grid": {
                "slot_minutes": sc.grid.slot_minutes,
                "dr_window": [format_clock(start * sc.grid.slot_minutes), format_clock(end * sc.grid.slot_minutes)],
            },
            "station": {
                "nominal_charge_kw": sc.station.nominal_charge_kw,
                "nominal_discharge_kw": sc.station.nominal_discharge_kw,
                "charge_points": sc.station.charge_points if sc.station.charge_points else "unlimited",
                "p_max_kw": sc.station.p_max_kw,
            },
            "tariff": {
                "incentive_per_kwh": ts.incentive_per_kwh,
                "grid_price_periods": [list(p) for p in ts.grid_price_periods],
                "charging_margin": ts.charging_margin,
                "grid_dr_compensation_per_kwh": ts.grid_dr_compensation_per_kwh,
            },
            "fleet": {f.name: _plain(getattr(sc.fleet, f.name)) for f in fields(FleetDistributions)},
            "profile_tables": sc.profile_tables.to_dict(),
            "llm": {f.name: _plain(getattr(sc.llm, f.name)) for f in fields(LlmSettings)},
            "sweep_grid": list(self.sweep_grid),
        }

    def digest(self) -> str:
        return config_digest(self.to_dict())


def _plain(v: Any) -> Any:
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


def config_digest(tree: dict[str, Any]) -> str:
    """SHA-256 over a key-sorted, whitespace-free JSON rendering."""
    text = json.dumps(tree, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# -- field readers ---------------------------------------------------------------


def _section(raw: Any, path: str, allowed: set[str]) -> dict[str, Any]:
    if not isinstance(raw, dict):
        raise ConfigError(path, "must be an object")
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown key")
    return raw


def _num(v: Any, path: str, *, integer: bool = False, lo: float | None = None, lo_open: bool = False) -> Any:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(path, "must be finite")
    if integer:
        if v != int(v):
            raise ConfigError(path, f"expected an integer, got {v!r}")
        v = int(v)
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(path, f"must be {'>' if lo_open else '>='} {lo:g}, got {v!r}")
    return v


def _pair(v: Any, path: str) -> tuple[float, float]:
    if not isinstance(v, list) or len(v) != 2:
        raise ConfigError(path, "expected a two-element list")
    a, b = (float(_num(x, f"{path}[{i}]")) for i, x in enumerate(v))
    if a > b:
        raise ConfigError(path, "lower bound exceeds upper bound")
    return a, b


def _str_list(v: Any, path: str) -> tuple[str, ...]:
    if not isinstance(v, list) or not v or not all(isinstance(x, str) for x in v):
        raise ConfigError(path, "expected a non-empty list of strings")
    return tuple(v)


def _choice(v: Any, path: str, options: tuple[str, ...]) -> str:
    if v not in options:
        raise ConfigError(path, f"expected one of {', '.join(options)}, got {v!r}")
    return v


def _build(path: str, factory: Callable[..., Any], **kwargs: Any) -> Any:
    try:
        return factory(**kwargs)
    except (EvcsSimError, ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(path, str(exc)) from exc


# -- sections --------------------------------------------------------------------


def _grid(raw: Any) -> TimeGrid:
    sec = _section(raw, "grid", {"slot_minutes", "dr_window"})
    slot = _num(sec.get("slot_minutes", 15), "grid.slot_minutes", integer=True, lo=0, lo_open=True)
    window = sec.get("dr_window", ["17:00", "22:00"])
    if not (isinstance(window, list) and len(window) == 2 and all(isinstance(w, str) for w in window)):
        raise ConfigError("grid.dr_window", 'expected ["HH:MM", "HH:MM"]')
    return _build("grid", TimeGrid.from_clock, start=window[0], end=window[1], slot_minutes=slot)


def _station(raw: Any) -> StationConfig:
    keys = {"nominal_charge_kw", "nominal_discharge_kw", "charge_points", "p_max_kw"}
    sec = _section(raw, "station", keys)
    d = StationConfig()
    points = sec.get("charge_points", "unlimited")
    if points == "unlimited" or points is None:
        points = None
    else:
        points = _num(points, "station.charge_points", integer=True, lo=1)
    return _build(
        "station",
        StationConfig,
        nominal_charge_kw=float(_num(sec.get("nominal_charge_kw", d.nominal_charge_kw), "station.nominal_charge_kw", lo=0, lo_open=True)),
        nominal_discharge_kw=float(_num(sec.get("nominal_discharge_kw", d.nominal_discharge_kw), "station.nominal_discharge_kw", lo=0, lo_open=True)),
        charge_points=points,
        p_max_kw=float(_num(sec.get("p_max_kw", d.p_max_kw), "station.p_max_kw", lo=0, lo_open=True)),
    )


def _tariff(raw: Any) -> TariffSpec:
    keys = {"incentive_per_kwh", "grid_price_periods", "charging_margin", "grid_dr_compensation_per_kwh"}
    sec = _section(raw, "tariff", keys)
    d = TariffSpec()
    periods = d.grid_price_periods
    if "grid_price_periods" in sec:
        rows = sec["grid_price_periods"]
        if not isinstance(rows, list) or not rows:
            raise ConfigError("tariff.grid_price_periods", "expected a non-empty list")
        parsed = []
        for i, row in enumerate(rows):
            p = f"tariff.grid_price_periods[{i}]"
            if not (isinstance(row, list) and len(row) == 3 and isinstance(row[0], str) and isinstance(row[1], str)):
                raise ConfigError(p, 'expected ["HH:MM", "HH:MM", price]')
            parsed.append((row[0], row[1], float(_num(row[2], f"{p}[2]", lo=0))))
        periods = tuple(parsed)
    return TariffSpec(
        float(_num(sec.get("incentive_per_kwh", d.incentive_per_kwh), "tariff.incentive_per_kwh", lo=0)),
        periods,
        float(_num(sec.get("charging_margin", d.charging_margin), "tariff.charging_margin", lo=0)),
        float(_num(sec.get("grid_dr_compensation_per_kwh", d.grid_dr_compensation_per_kwh), "tariff.grid_dr_compensation_per_kwh", lo=0)),
    )


_FLEET_PAIRS = ("soc_current_range", "distance_km_range", "age_range")
_FLEET_STRS = ("genders", "occupations")


def _fleet(raw: Any) -> FleetDistributions:
    names = {f.name for f in fields(FleetDistributions)}
    sec = _section(raw, "fleet", names)
    kwargs: dict[str, Any] = {}
    for key, v in sec.items():
        path = f"fleet.{key}"
        if key in _FLEET_PAIRS:
            kwargs[key] = _pair(v, path)
        elif key in _FLEET_STRS:
            kwargs[key] = _str_list(v, path)
        elif key == "capacities_kwh":
            if not isinstance(v, list) or not v:
                raise ConfigError(path, "expected a non-empty list")
            kwargs[key] = tuple(float(_num(x, f"{path}[{i}]", lo=0, lo_open=True)) for i, x in enumerate(v))
        else:
            kwargs[key] = float(_num(v, path))
    return _build("fleet", FleetDistributions, **kwargs)


def _profile_tables(raw: Any) -> ProfileTables:
    if isinstance(raw, str):
        try:
            return load_profile_tables(raw)
        except OSError as exc:
            raise ConfigError("profile_tables", f"cannot read {raw}: {exc}") from exc
        except (EvcsSimError, ValueError, KeyError) as exc:
            raise ConfigError("profile_tables", str(exc)) from exc
    keys = {
        "income_terciles",
        "tier_price_sensitivity",
        "occupation_price_adjustment",
        "age_time_sensitivity",
        "degradation_rate_range",
        "psychology",
    }
    sec = _section(raw, "profile_tables", keys)
    merged = load_profile_tables().to_dict()
    for key, value in sec.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    try:
        return ProfileTables.from_dict(merged)
    except KeyError as exc:
        raise ConfigError("profile_tables", f"missing entry {exc}") from exc
    except (EvcsSimError, ValueError, TypeError) as exc:
        raise ConfigError("profile_tables", str(exc)) from exc


def _llm(raw: Any) -> LlmSettings:
    names = {f.name for f in fields(LlmSettings)}
    sec = _section(raw, "llm", names)
    d = LlmSettings()
    kwargs: dict[str, Any] = {}
    for key, v in sec.items():
        path = f"llm.{key}"
        if key == "model":
            if not isinstance(v, str) or not v:
                raise ConfigError(path, "expected a non-empty string")
            kwargs[key] = v
        elif key == "corpus_dir":
            if v is not None and not isinstance(v, str):
                raise ConfigError(path, "expected a path string or null")
            kwargs[key] = v
        elif key == "weights":
            w = _section(v, path, set(d.weights))
            missing = sorted(set(d.weights) - set(w))
            if missing:
                raise ConfigError(f"{path}.{missing[0]}", "missing weight")
            kwargs[key] = {r: float(_num(w[r], f"{path}.{r}", lo=0)) for r in d.weights}
            if sum(kwargs[key].values()) <= 0:
                raise ConfigError(path, "weights must not all be zero")
        elif key in ("max_rounds", "top_k", "max_retries"):
            kwargs[key] = _num(v, path, integer=True, lo=0)
        elif key == "max_in_flight":
            kwargs[key] = _num(v, path, integer=True, lo=1)
        elif key == "timeout_s":
            kwargs[key] = float(_num(v, path, lo=0, lo_open=True))
        else:
            kwargs[key] = float(_num(v, path, lo=0))
    return _build("llm", LlmSettings, **kwargs)


TOP_LEVEL = {
    "seed",
    "fleet_size",
    "agent",
    "accounting_mode",
    "grid",
    "station",
    "tariff",
    "fleet",
    "profile_tables",
    "llm",
    "sweep_grid",
}


def parse_config(raw: Any) -> RunConfig:
    sec = _section(raw, "", TOP_LEVEL)
    seed = _num(sec.get("seed", DEFAULT_SEED), "seed", integer=True, lo=0)
    if seed >= 2**64:
        raise ConfigError("seed", "must fit in 64 bits")
    fleet_size = _num(sec.get("fleet_size", 100), "fleet_size", integer=True, lo=0)
    agent = _choice(sec.get("agent", "baseline"), "agent", AGENT_KINDS)
    mode = _choice(sec.get("accounting_mode", "consistent"), "accounting_mode", ACCOUNTING_MODES)
    grid = _grid(sec.get("grid", {}))
    station = _station(sec.get("station", {}))
    tspec = _tariff(sec.get("tariff", {}))
    tariff = _build("tariff", tspec.build, grid=grid)
    fleet = _fleet(sec.get("fleet", {}))
    tables = _profile_tables(sec["profile_tables"]) if "profile_tables" in sec else load_profile_tables()
    llm = _llm(sec.get("llm", {}))
    sweep = DEFAULT_INCENTIVE_GRID
    if "sweep_grid" in sec:
        try:
            sweep = parse_grid(sec["sweep_grid"]) if isinstance(sec["sweep_grid"], str) else check_grid(sec["sweep_grid"])
        except GridSpecError as exc:
            raise ConfigError("sweep_grid", str(exc)) from exc
    scenario = _build(
        "",
        ScenarioConfig,
        seed=seed,
        fleet_size=fleet_size,
        grid=grid,
        station=station,
        tariff=tariff,
        fleet=fleet,
        profile_tables=tables,
        agent_kind=agent,
        accounting_mode=mode,
        llm=llm,
    )
    return RunConfig(scenario, tspec, sweep)


def load_config(path: str | Path | None = None) -> RunConfig:
    """Read a JSON config file; ``None`` gives the built-in defaults."""
    if path is None:
        return parse_config({})
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return parse_config(raw)


def with_overrides(run: RunConfig, **overrides: Any) -> RunConfig:
    """Apply CLI-style overrides (None values are ignored) by round-tripping the resolved tree."""
    tree = run.to_dict()
    paths = {
        "seed": ("seed",),
        "fleet_size": ("fleet_size",),
        "agent": ("agent",),
        "accounting_mode": ("accounting_mode",),
        "incentive": ("tariff", "incentive_per_kwh"),
    }
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in paths:
            raise ConfigError(key, "unknown override")
        *parents, leaf = paths[key]
        node = tree
        for p in parents:
            node = node[p]
        node[leaf] = value
    return parse_config(tree)


# -- incentive grids -------------------------------------------------------------


def check_grid(values: Any) -> tuple[float, ...]:
    if not isinstance(values, (list, tuple)) or not values:
        raise GridSpecError("incentive grid must be a non-empty list")
    out = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v < 0:
            raise GridSpecError(f"bad incentive value {v!r}")
        out.append(float(v))
    if any(b <= a for a, b in zip(out, out[1:])):
        raise GridSpecError("incentive grid must be strictly increasing")
    return tuple(out)


def parse_grid(text: str) -> tuple[float, ...]:
    """``"a:b:step"`` with both endpoints included when ``b - a`` is a whole number of steps."""
    parts = text.split(":")
    if len(parts) != 3:
        raise GridSpecError(f"grid {text!r} is not of the form start:stop:step")
    try:
        a, b, step = (float(p) for p in parts)
    except ValueError:
        raise GridSpecError(f"grid {text!r} has a non-numeric part") from None
    if not all(math.isfinite(x) for x in (a, b, step)):
        raise GridSpecError(f"grid {text!r} has a non-finite part")
    if step <= 0:
        raise GridSpecError("grid step must be positive")
    if b < a:
        raise GridSpecError(f"grid {text!r} is descending")
    if a < 0:
        raise GridSpecError("incentives must be non-negative")
    n = math.floor((b - a) / step + 1e-9)
    if n > 100_000:
        raise GridSpecError("grid has too many levels")
    return tuple(round(a + i * step, 10) for i in range(n + 1))
