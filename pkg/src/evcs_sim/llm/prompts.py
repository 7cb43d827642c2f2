"""Prompt templates. Fixture fingerprints hash the rendered text, so bump
PROMPT_VERSION whenever a template changes and re-record fixtures."""

from __future__ import annotations

import json
from typing import Any, Sequence

from ..profiles import DecisionContext, SessionDecision, UserProfile, dischargeable_kwh
from .retrieval import Passage

PROMPT_VERSION = 1

ROLES = ("economics", "temporal", "power_systems", "consumer_behavior", "comprehensive")

ROLE_BRIEFS = {
    "economics": "You judge whether the decision makes economic sense for the user given the incentive, "
    "battery degradation and the user's risk premium.",
    "temporal": "You judge whether the timing is workable: waiting time against the user's delay tolerance, "
    "and whether charging completes before the departure deadline.",
    "power_systems": "You judge technical safety: discharge only inside the DR window, never below the trip "
    "reserve or the battery safety floor, and within the charger rating.",
    "consumer_behavior": "You judge whether a person with this profile would plausibly make this choice.",
    "comprehensive": "You weigh all aspects together and give an overall assessment.",
}

ROLE_QUERIES = {
    "economics": "incentive payment cost margin price degradation",
    "temporal": "delay tolerance departure time window deferral",
    "power_systems": "peak power limit discharge reserve safety floor",
    "consumer_behavior": "users participation risk incentive drivers",
    "comprehensive": "peak incentive delay battery station",
}

DECISION_SYSTEM = (
    "You are the behavioural decision agent of an electric-vehicle driver's digital twin at a charging "
    "station that runs a vehicle-to-grid demand-response event. Given the driver's profile, the vehicle "
    "state and the incentive on offer, decide how this session should be served. "
    "Modes: 'charge_only' charges immediately; 'v2g' discharges to the grid inside the DR window and then "
    "recharges to target; 'deferred_charge' postpones charging to planned_start_slot. "
    "Reply with exactly one JSON object and nothing else, with these fields: "
    '"participate" (boolean), "mode" (string), "discharge_kwh" (number, battery energy to discharge, 0 '
    'unless mode is v2g), "planned_start_slot" (integer slot index), "rationale" (string).'
)

EXPERT_SYSTEM = (
    "You are the {role} expert on a committee that reviews charging decisions made for electric-vehicle "
    "drivers. {brief} Use the reference passages where relevant. Reply with exactly one JSON object and "
    'nothing else: {{"verdict": "approve" or "reject", "reasoning": string, "citations": list of '
    "passage ids you relied on}}."
)


def _r(x: float) -> float:
    return round(float(x), 6)


def context_payload(context: DecisionContext, profile: UserProfile) -> dict[str, Any]:
    s, g, st = context.session, context.grid, context.station
    cp = profile.cost_profile
    forecast = None
    if context.station_load_forecast is not None and len(context.station_load_forecast):
        f = list(context.station_load_forecast)
        peak = max(range(len(f)), key=lambda i: (f[i], -i))
        forecast = {"peak_slot": peak, "peak_time": g.clock(peak), "peak_kw": _r(f[peak])}
    return {
        "prompt_version": PROMPT_VERSION,
        "slot_minutes": g.slot_minutes,
        "current_slot": context.current_slot,
        "current_time": g.clock(context.current_slot),
        "dr_window": {
            "start_slot": g.start_slot,
            "end_slot": g.end_slot,
            "start": g.clock(g.start_slot),
            "end": g.clock(g.end_slot),
        },
        "incentive_per_kwh": _r(context.tariff.incentive_per_kwh),
        "vehicle": {
            "capacity_kwh": _r(s.capacity_kwh),
            "soc_current": _r(s.soc_current),
            "soc_target": _r(s.soc_target),
            "trip_reserve_kwh": _r(s.reserve_kwh),
            "dischargeable_kwh": _r(dischargeable_kwh(s)),
            "eta_charge": _r(s.eta_charge),
            "eta_discharge": _r(s.eta_discharge),
            "required_by_slot": s.required_by_slot,
        },
        "station": {
            "nominal_charge_kw": _r(st.nominal_charge_kw),
            "nominal_discharge_kw": _r(st.nominal_discharge_kw),
        },
        "profile": {
            "economic_tier": profile.economic_tier,
            "time_sensitivity": _r(profile.time_sensitivity),
            "price_sensitivity": _r(profile.price_sensitivity),
            "delay_tolerance_hours": _r(cp.t_tolerance_hours),
            "delay_cost_coeff": _r(cp.delay_coeff_a),
            "delay_cost_exponent": _r(cp.delay_exponent_b),
            "degradation_cost_per_kwh": _r(cp.degradation_per_kwh),
            "risk_premium": _r(cp.risk_premium),
        },
        "load_forecast": forecast,
    }


def _block(obj: Any) -> str:
    return "```json\n" + json.dumps(obj, sort_keys=True, indent=1) + "\n```"


def decision_prompt(
    context: DecisionContext,
    profile: UserProfile,
    previous: SessionDecision | None = None,
    objections: Sequence[tuple[str, str]] = (),
    schema_error: str | None = None,
) -> str:
    parts = ["Session context:", _block(context_payload(context, profile))]
    if previous is not None:
        parts += ["Your previous proposal:", _block(previous.to_dict())]
    if objections:
        parts.append("The review committee rejected it. Objections:")
        parts += [f"- {role}: {why}" for role, why in objections]
        parts.append("Revise the decision to address the objections.")
    if schema_error:
        parts.append(f"Your previous reply could not be used ({schema_error}). Reply with only the JSON object.")
    return "\n".join(parts)


def expert_prompt(
    decision: SessionDecision,
    context: DecisionContext,
    profile: UserProfile,
    passages: Sequence[Passage],
) -> str:
    parts = [
        "Proposed decision:",
        _block(decision.to_dict()),
        "Session context:",
        _block(context_payload(context, profile)),
        "Reference passages:",
    ]
    parts += [f"[{p.passage_id}] {p.text}" for p in passages] or ["(none)"]
    return "\n".join(parts)
