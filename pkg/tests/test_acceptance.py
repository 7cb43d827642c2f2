"""Acceptance suite: one test per criterion, each reported as a PASS/FAIL line in the terminal summary."""

from __future__ import annotations

import itertools
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import FIXTURES
from oracles import DELAY, DEMAND, DISCHARGE, RMIN, SLOTS
from evcs_sim.cli import main
from evcs_sim.config import load_config, with_overrides
from evcs_sim.economics import CostProfile, delay_cost, min_acceptable_reward
from evcs_sim.engine import DEFAULT_INCENTIVE_GRID, ScenarioConfig, default_tariff, run_scenario, sweep_incentive
from evcs_sim.llm.agents import ExpertReport, LlmAgent, committee_vote
from evcs_sim.llm.prompts import ROLES
from evcs_sim.llm.retrieval import Corpus
from evcs_sim.llm.transport import ReplayClient
from evcs_sim.physics import (
    EvSession,
    StationConfig,
    TimeGrid,
    bounds_for,
    charge_duration_slots,
    charge_energy_demand,
    discharge_duration_hours,
    validate_schedule,
)
from evcs_sim.profiles import DecisionContext, UserProfile, baseline_decide

REL = 1e-9
POST_WINDOW = slice(88, 96)


def close(got: float, expected: float) -> bool:
    return abs(got - expected) <= max(REL * abs(expected), 1e-12)


def schedule_problems(result, station: StationConfig, grid: TimeGrid) -> list[str]:
    """Constraint violations plus any session whose net stored energy misses its target."""
    out = []
    dt = grid.slot_minutes / 60.0
    for o in result.outcomes:
        s = o.session
        out += [f"{s.session_id}: {v}" for v in validate_schedule(o.schedule, s, bounds_for(s), station, grid)]
        p = o.schedule.power_kw
        net = float(p.clip(0).sum() * dt * s.eta_charge - (-p).clip(0).sum() * dt * s.eta_discharge)
        if abs(net - (s.target_kwh - s.stored_kwh)) > 1e-6:
            out.append(f"{s.session_id}: energy balance off by {net - (s.target_kwh - s.stored_kwh):.3g} kWh")
    return out


@pytest.fixture(scope="module")
def default_sweep():
    return sweep_incentive(ScenarioConfig(), DEFAULT_INCENTIVE_GRID, jobs=1)


def level(sweep, rate: float):
    return next(r for r in sweep.results if abs(r.incentive_per_kwh - rate) < 1e-9)


@pytest.mark.criterion(1, "formula oracles match at rel 1e-9 in under 1 s")
def test_formula_oracles(record_property):
    t0 = time.perf_counter()
    failures = []
    for target, current, cap, expected in DEMAND:
        if not close(charge_energy_demand(target, current, cap), expected):
            failures.append(("demand", target, current, cap))
    for energy, eta, kw, minutes, expected in SLOTS:
        if charge_duration_slots(energy, eta, kw, TimeGrid(minutes)) != expected:
            failures.append(("slots", energy, eta, kw, minutes))
    for soc, cap, distance, phi, eta, kw, expected in DISCHARGE:
        s = EvSession(cap, soc, max(soc, 0.9), distance, phi, 0.95, eta, 64, 96)
        st = StationConfig(nominal_charge_kw=22.0, nominal_discharge_kw=kw, p_max_kw=22.0)
        if not close(discharge_duration_hours(s, st), expected):
            failures.append(("discharge", soc, cap, distance))
    for t, tol, a, b, expected in DELAY:
        cost = CostProfile(t_tolerance_hours=tol, delay_coeff_a=a, delay_exponent_b=b, degradation_per_kwh=0.5,
                           risk_premium=0.2)
        if not close(delay_cost(t, cost), expected):
            failures.append(("delay", t, tol, a, b))
    for deg, delay, gamma, expected in RMIN:
        if not close(min_acceptable_reward(deg, delay, gamma), expected):
            failures.append(("r_min", deg, delay, gamma))
    elapsed = time.perf_counter() - t0
    sizes = [len(t) for t in (DEMAND, SLOTS, DISCHARGE, DELAY, RMIN)]
    record_property("detail", f"cases per formula {sizes}, {elapsed * 1000:.1f} ms")
    assert min(sizes) >= 20
    assert failures == []
    assert elapsed < 1.0


@pytest.mark.slow
@pytest.mark.criterion(2, "100 seeds x 16 levels validate with energy balance in under 60 s")
def test_constraint_suite(record_property):
    t0 = time.perf_counter()
    problems = []
    sessions = 0
    for seed in range(100):
        cfg = ScenarioConfig(seed=seed)
        for res in sweep_incentive(cfg, DEFAULT_INCENTIVE_GRID, jobs=1).results:
            sessions += len(res.outcomes)
            problems += schedule_problems(res, cfg.station, cfg.grid)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"{sessions} sessions, {len(problems)} violations, {elapsed:.1f} s")
    assert problems == []
    assert elapsed < 60.0


@pytest.mark.criterion(3, "discharged energy monotone over the grid, onset at 0.2")
def test_discharge_trend(default_sweep, record_property):
    energy = [r.total_discharged_kwh for r in default_sweep.results]
    steps = list(zip(energy, energy[1:]))
    rises = sum(b > a for a, b in steps)
    onset = level(default_sweep, 0.2).participation_rate
    record_property("detail", f"{rises} strict rises, participation at 0.2 = {onset:.2f}")
    assert all(b >= a for a, b in steps)
    assert rises >= 5
    assert onset > 0


@pytest.mark.criterion(4, "peak shaving at 0.5 and post-window rebound at 1.2")
def test_peak_and_rebound(default_sweep, record_property):
    p0, p5, p12 = (level(default_sweep, r) for r in (0.0, 0.5, 1.2))
    post5 = float(p5.total_load_kw[POST_WINDOW].max())
    post12 = float(p12.total_load_kw[POST_WINDOW].max())
    record_property("detail", f"peak {p0.peak_load_kw:.1f} -> {p5.peak_load_kw:.1f} kW, "
                              f"post-window max {post5:.1f} -> {post12:.1f} kW")
    assert p5.peak_load_kw < p0.peak_load_kw
    assert post12 > post5


@pytest.mark.criterion(5, "profit strictly falls once participation starts, non-negative up to 1.3")
def test_profit_trend(default_sweep, record_property):
    rows = [(r.incentive_per_kwh, r.participation_count, r.station_profit) for r in default_sweep.results]
    start = next(i for i, (_, n, _) in enumerate(rows) if n > 0)
    tail = [p for _, _, p in rows[start:]]
    floor = min(p for rate, _, p in rows if rate <= 1.3 + 1e-9)
    record_property("detail", f"participation from {rows[start][0]:g}, min profit up to 1.3 = {floor:.2f}")
    assert all(b < a for a, b in zip(tail, tail[1:]))
    assert floor >= 0


@pytest.mark.criterion(6, "baseline participation is monotone in the incentive (1000 random pairs)")
def test_baseline_monotone(record_property):
    rng = np.random.default_rng(6)
    grid, station = TimeGrid(), StationConfig()
    checked = participating = 0
    bad = []
    for _ in range(1000):
        # most arrivals land before the window closes so the implication is exercised, not vacuous
        slot = int(rng.integers(24, 95)) if rng.random() < 0.2 else int(rng.integers(48, 84))
        s = EvSession(
            capacity_kwh=float(rng.choice([40.0, 60.0, 80.0])),
            soc_current=float(rng.uniform(0.2, 0.8)),
            soc_target=0.9,
            distance_km=float(rng.uniform(5, 80)),
            consumption_kwh_per_100km=float(rng.uniform(12, 20)),
            eta_charge=0.95,
            eta_discharge=0.9,
            arrival_slot=slot,
            required_by_slot=int(rng.integers(slot + 1, 97)) if rng.random() < 0.3 else 96,
        )
        cost = CostProfile(
            t_tolerance_hours=float(rng.uniform(0, 4)),
            delay_coeff_a=float(rng.uniform(0.5, 4)),
            delay_exponent_b=float(rng.uniform(1, 2.5)),
            degradation_per_kwh=float(rng.uniform(0.05, 1.5)),
            risk_premium=float(rng.uniform(0, 1)),
        )
        profile = UserProfile(str(rng.choice(["low", "middle", "high"])), 0.5, 0.5, cost)
        rate = float(rng.uniform(0, 3))
        here = baseline_decide(DecisionContext(s, default_tariff(grid, rate), grid, slot, station), profile)
        up = baseline_decide(DecisionContext(s, default_tariff(grid, rate + 0.1), grid, slot, station), profile)
        checked += 1
        participating += here.participate
        if here.participate and not up.participate:
            bad.append((rate, s))
    record_property("detail", f"{checked} pairs, {participating} participating at r")
    assert checked == 1000
    assert bad == []


@pytest.mark.criterion(7, "committee vote is scale invariant and ties reject")
def test_committee_algebra(record_property):
    rng = np.random.default_rng(7)
    subsets = [set(c) for k in range(6) for c in itertools.combinations(ROLES, k)]

    def reports(approving):
        return [ExpertReport(r, "approve" if r in approving else "reject", "") for r in ROLES]

    mismatches = 0
    for _ in range(100):
        w = dict(zip(ROLES, rng.uniform(0.01, 10, size=5)))
        scale = float(rng.uniform(0.001, 1000))
        scaled = {r: x * scale for r, x in w.items()}
        for sub in subsets:
            mismatches += committee_vote(reports(sub), w).approved != committee_vote(reports(sub), scaled).approved

    ties = approved_ties = 0
    for _ in range(100):
        w = {r: int(x) for r, x in zip(ROLES, rng.integers(1, 20, size=5))}
        for sub in subsets:
            yes = sum(w[r] for r in sub)
            if 2 * yes == sum(w.values()):
                ties += 1
                approved_ties += committee_vote(reports(sub), w).approved
    record_property("detail", f"{100 * len(subsets)} scaled votes, {ties} exact ties")
    assert mismatches == 0
    assert ties > 0 and approved_ties == 0


@pytest.mark.criterion(8, "replayed llm sweeps give byte-identical CSVs")
def test_sweep_determinism(tmp_path, monkeypatch, record_property):
    monkeypatch.delenv("EVCS_SIM_API_URL", raising=False)
    args = ["sweep", "--agent", "llm", "--replay", str(FIXTURES / "llm_sweep.jsonl"), "--fleet-size", "20",
            "--grid", "0:1.5:0.5", "--jobs", "1"]
    runs = [tmp_path / "a", tmp_path / "b"]
    for out in runs:
        assert main([*args, "--out", str(out)]) == 0
    names = sorted(p.name for p in runs[0].glob("*.csv"))
    same = [n for n in names if (runs[0] / n).read_bytes() == (runs[1] / n).read_bytes()]
    record_property("detail", f"{len(same)}/{len(names)} CSV files identical")
    assert len(names) == 5
    assert same == names


def _replay_run(fixture: str):
    run = with_overrides(load_config(), agent="llm", incentive=0.8)
    client = ReplayClient.from_path(FIXTURES / fixture)
    agent = LlmAgent.from_settings(client, run.scenario.llm, Corpus.bundled())
    return run.scenario, client, run_scenario(run.scenario, agent)


@pytest.mark.criterion(9, "replay fixtures run offline and failures fall back to the baseline")
def test_llm_robustness(record_property):
    cfg, client, normal = _replay_run("llm_normal.jsonl")
    assert client.misses == []
    assert schedule_problems(normal, cfg.station, cfg.grid) == []
    baseline = {o.session.session_id: o.decision for o in run_scenario(cfg.with_incentive(0.8)).outcomes}

    counts = {}
    for fixture, cause in [("llm_schema_error.jsonl", "SchemaError"), ("llm_miss.jsonl", "FixtureMiss"),
                           ("llm_reject_all.jsonl", "committee rejected")]:
        cfg, _, res = _replay_run(fixture)
        fallbacks = [o for o in res.outcomes if o.fallback and cause in o.fallback]
        counts[cause] = len(fallbacks)
        assert fallbacks, f"{fixture} never exercised the {cause} fallback"
        for o in fallbacks:
            want = baseline[o.session.session_id]
            assert (o.decision.participate, o.decision.mode) == (want.participate, want.mode)
            assert o.decision.discharge_kwh == pytest.approx(want.discharge_kwh)
        assert schedule_problems(res, cfg.station, cfg.grid) == []
    record_property("detail", "fallbacks " + ", ".join(f"{k}={v}" for k, v in counts.items()))


@pytest.mark.criterion(10, "default sweep with one job in under 5 s")
def test_desk_runtime(tmp_path, record_property):
    t0 = time.perf_counter()
    assert main(["sweep", "--jobs", "1", "--out", str(tmp_path / "sw")]) == 0
    elapsed = time.perf_counter() - t0
    record_property("detail", f"{elapsed:.2f} s including CSV output")
    assert len(list(Path(tmp_path / "sw").glob("loads_*.csv"))) == 16
    assert elapsed < 5.0
