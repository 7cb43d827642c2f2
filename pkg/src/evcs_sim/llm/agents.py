"""LLM-backed decision agent and the weighted expert review committee."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Callable, Mapping, Sequence

from ..errors import AgentError, EvcsSimError, SchemaError
from ..profiles import (
    DecisionContext,
    Mode,
    SessionDecision,
    UserProfile,
    baseline_decide,
    dischargeable_kwh,
)
from .prompts import (
    DECISION_SYSTEM,
    EXPERT_SYSTEM,
    ROLE_BRIEFS,
    ROLE_QUERIES,
    ROLES,
    decision_prompt,
    expert_prompt,
)
from .retrieval import Corpus, retrieve_context
from .transport import ChatClient, ChatRequest

log = logging.getLogger(__name__)

DEFAULT_WEIGHTS = {
    "economics": 1.5,
    "temporal": 1.0,
    "power_systems": 1.5,
    "consumer_behavior": 1.0,
    "comprehensive": 2.0,
}

DECISION_FIELDS = ("participate", "mode", "discharge_kwh", "planned_start_slot", "rationale")


class CommitteeError(EvcsSimError, ValueError):
    pass


def extract_json_object(text: str) -> dict[str, Any]:
    """First JSON object embedded anywhere in ``text`` (fenced or bare)."""
    decoder = json.JSONDecoder()
    i = text.find("{")
    while i != -1:
        try:
            obj, _ = decoder.raw_decode(text, i)
        except json.JSONDecodeError:
            i = text.find("{", i + 1)
            continue
        if isinstance(obj, dict):
            return obj
        i = text.find("{", i + 1)
    raise SchemaError("no JSON object in response")


def _number(obj: dict[str, Any], key: str) -> float:
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise SchemaError(f"{key} must be a finite number, got {v!r}")
    return float(v)


def parse_decision(response_text: str, context: DecisionContext | None = None) -> SessionDecision:
    """Bind a model reply to a SessionDecision, clamping numbers into the session's feasible range."""
    obj = extract_json_object(response_text)
    missing = [f for f in DECISION_FIELDS if f not in obj]
    if missing:
        raise SchemaError(f"missing field(s): {', '.join(missing)}")
    if not isinstance(obj["participate"], bool):
        raise SchemaError("participate must be a boolean")
    try:
        mode = Mode(obj["mode"])
    except ValueError:
        raise SchemaError(f"unknown mode {obj['mode']!r}") from None
    participate = obj["participate"]
    if mode is Mode.V2G and not participate:
        raise SchemaError("mode v2g with participate=false")
    discharge = _number(obj, "discharge_kwh")
    start_raw = _number(obj, "planned_start_slot")
    if start_raw != int(start_raw):
        raise SchemaError("planned_start_slot must be an integer")
    start = int(start_raw)
    rationale = str(obj["rationale"])
    notes = []

    if mode is not Mode.V2G and discharge != 0:
        notes.append(f"discharge_kwh {discharge:g} ignored for mode {mode.value}")
        discharge = 0.0
    if discharge < 0:
        notes.append(f"discharge_kwh {discharge:g} clamped to 0")
        discharge = 0.0

    if context is not None:
        g, s, st = context.grid, context.session, context.station
        last = g.slots_per_day - 1
        if start < context.current_slot or start > last:
            clamped = min(max(start, context.current_slot), last)
            notes.append(f"planned_start_slot {start} clamped to {clamped}")
            start = clamped
        if mode is Mode.V2G:
            begin = max(start, g.start_slot)
            room = max(g.end_slot - begin, 0) * s.eta_discharge * st.nominal_discharge_kw * g.slot_hours
            cap = min(dischargeable_kwh(s), room)
            if discharge > cap:
                notes.append(f"discharge_kwh {discharge:g} clamped to {cap:.6g}")
                discharge = cap
            if discharge <= 0:
                notes.append("nothing dischargeable; served as charge_only")
                mode, participate, discharge = Mode.CHARGE_ONLY, False, 0.0
    if notes:
        rationale = f"{rationale} [clamped: {'; '.join(notes)}]"
    return SessionDecision(participate, mode, discharge, start, rationale)


@dataclass(frozen=True)
class ExpertReport:
    expert_role: str
    verdict: str
    reasoning: str
    citations: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.expert_role not in ROLES:
            raise CommitteeError(f"unknown expert role {self.expert_role!r}")
        if self.verdict not in ("approve", "reject"):
            raise CommitteeError(f"verdict must be approve or reject, got {self.verdict!r}")

    @property
    def approves(self) -> bool:
        return self.verdict == "approve"


@dataclass(frozen=True)
class CommitteeVerdict:
    approved: bool
    weighted_for: float
    weighted_against: float
    rounds_used: int = 1


def parse_report(response_text: str, role: str, retrieved: Sequence[str]) -> ExpertReport:
    obj = extract_json_object(response_text)
    verdict = str(obj.get("verdict", "")).strip().lower()
    if verdict not in ("approve", "reject"):
        raise SchemaError(f"verdict must be approve or reject, got {obj.get('verdict')!r}")
    if "reasoning" not in obj:
        raise SchemaError("missing field: reasoning")
    cited = obj.get("citations")
    if isinstance(cited, list):
        citations = tuple(str(c) for c in cited)
    else:
        citations = tuple(retrieved)
    return ExpertReport(role, verdict, str(obj["reasoning"]), citations)


def expert_evaluate(
    decision: SessionDecision,
    context: DecisionContext,
    profile: UserProfile,
    role: str,
    client: ChatClient,
    corpus: Corpus | None = None,
    *,
    k: int = 3,
    model: str = "gpt-4",
    temperature: float = 0.0,
) -> ExpertReport:
    if role not in ROLES:
        raise CommitteeError(f"unknown expert role {role!r}")
    query = f"{ROLE_QUERIES[role]} {decision.mode.value.replace('_', ' ')}"
    passages = retrieve_context(query, corpus, k) if corpus is not None else []
    request = ChatRequest(
        EXPERT_SYSTEM.format(role=role.replace("_", " "), brief=ROLE_BRIEFS[role]),
        expert_prompt(decision, context, profile, passages),
        model,
        temperature,
    )
    return parse_report(client.complete(request), role, [p.passage_id for p in passages])


def committee_vote(
    reports: Sequence[ExpertReport], weights: Mapping[str, float] = DEFAULT_WEIGHTS, rounds_used: int = 1
) -> CommitteeVerdict:
    """Weighted majority: approve only if approving weight is strictly more than half. Ties reject."""
    by_role = {r.expert_role: r for r in reports}
    if len(by_role) != len(reports):
        raise CommitteeError("more than one report for a role")
    missing = [role for role in ROLES if role not in by_role]
    if missing:
        raise CommitteeError(f"missing report(s) for {', '.join(missing)}")
    if any(weights.get(role, -1) < 0 for role in ROLES):
        raise CommitteeError("every role needs a non-negative weight")
    # exact arithmetic so that ties are ties
    w = {role: Fraction(weights[role]) for role in ROLES}
    yes = sum((w[r] for r in ROLES if by_role[r].approves), Fraction(0))
    total = sum(w.values(), Fraction(0))
    if total <= 0:
        raise CommitteeError("weights sum to zero")
    return CommitteeVerdict(2 * yes > total, float(yes), float(total - yes), rounds_used)


@dataclass
class RefineOutcome:
    decision: SessionDecision
    verdicts: list[CommitteeVerdict] = field(default_factory=list)
    reports: list[list[ExpertReport]] = field(default_factory=list)
    fell_back: bool = False

    @property
    def rounds_used(self) -> int:
        return len(self.verdicts)


def refine_loop(
    initial: SessionDecision,
    context: DecisionContext,
    profile: UserProfile,
    evaluate: Callable[[SessionDecision], list[ExpertReport]],
    redecide: Callable[[SessionDecision, list[tuple[str, str]]], SessionDecision],
    *,
    weights: Mapping[str, float] = DEFAULT_WEIGHTS,
    max_rounds: int = 2,
) -> RefineOutcome:
    """Review, and on rejection revise, up to ``max_rounds`` times; then fall back to the baseline rule.

    ``max_rounds=0`` disables review and returns ``initial`` unchanged.
    """
    if max_rounds < 0:
        raise ValueError("max_rounds must be >= 0")
    out = RefineOutcome(initial)
    if max_rounds == 0:
        return out
    decision = initial
    for round_no in range(1, max_rounds + 1):
        reports = evaluate(decision)
        verdict = committee_vote(reports, weights, round_no)
        out.verdicts.append(verdict)
        out.reports.append(reports)
        if verdict.approved:
            out.decision = decision
            return out
        if round_no == max_rounds:
            break
        objections = [(r.expert_role, r.reasoning) for r in reports if not r.approves]
        try:
            decision = redecide(decision, objections)
        except AgentError as exc:
            log.info("revision failed: %s", exc)
            break
    base = baseline_decide(context, profile)
    out.decision = replace(base, rationale=f"committee rejected after {out.rounds_used} round(s); {base.rationale}")
    out.fell_back = True
    return out


class LlmAgent:
    """Decision agent that asks a chat model, then has the expert committee review the answer."""

    uses_forecast = True
    name = "llm"

    def __init__(
        self,
        client: ChatClient,
        *,
        corpus: Corpus | None = None,
        weights: Mapping[str, float] = DEFAULT_WEIGHTS,
        max_rounds: int = 2,
        model: str = "gpt-4",
        temperature: float = 0.0,
        top_k: int = 3,
        max_in_flight: int = 5,
    ) -> None:
        self.client = client
        self.corpus = corpus
        self.weights = dict(weights)
        self.max_rounds = max_rounds
        self.model = model
        self.temperature = temperature
        self.top_k = top_k
        self.max_in_flight = max(1, max_in_flight)
        # reason the last decide() returned the baseline decision, if it did
        self.last_fallback: str | None = None

    @classmethod
    def from_settings(cls, client: ChatClient, settings: Any, corpus: Corpus | None = None) -> LlmAgent:
        return cls(
            client,
            corpus=corpus,
            weights=settings.weights,
            max_rounds=settings.max_rounds,
            model=settings.model,
            temperature=settings.temperature,
            top_k=settings.top_k,
            max_in_flight=settings.max_in_flight,
        )

    def _ask(self, user_prompt: Callable[[str | None], str], context: DecisionContext) -> SessionDecision:
        text = self.client.complete(ChatRequest(DECISION_SYSTEM, user_prompt(None), self.model, self.temperature))
        try:
            return parse_decision(text, context)
        except SchemaError as exc:
            log.info("decision reply unusable, asking again: %s", exc)
            problem = str(exc)
        text = self.client.complete(ChatRequest(DECISION_SYSTEM, user_prompt(problem), self.model, self.temperature))
        return parse_decision(text, context)

    def propose(self, context: DecisionContext, profile: UserProfile) -> SessionDecision:
        return self._ask(lambda err: decision_prompt(context, profile, schema_error=err), context)

    def revise(
        self,
        context: DecisionContext,
        profile: UserProfile,
        previous: SessionDecision,
        objections: list[tuple[str, str]],
    ) -> SessionDecision:
        return self._ask(lambda err: decision_prompt(context, profile, previous, objections, err), context)

    def evaluate(self, decision: SessionDecision, context: DecisionContext, profile: UserProfile) -> list[ExpertReport]:
        def one(role: str) -> ExpertReport:
            try:
                return expert_evaluate(
                    decision, context, profile, role, self.client, self.corpus,
                    k=self.top_k, model=self.model, temperature=self.temperature,
                )
            except AgentError as exc:
                return ExpertReport(role, "reject", f"evaluation failed: {type(exc).__name__}: {exc}")

        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return list(pool.map(one, ROLES))

    def review(self, context: DecisionContext, profile: UserProfile) -> RefineOutcome:
        initial = self.propose(context, profile)
        return refine_loop(
            initial,
            context,
            profile,
            lambda d: self.evaluate(d, context, profile),
            lambda d, obj: self.revise(context, profile, d, obj),
            weights=self.weights,
            max_rounds=self.max_rounds,
        )

    def decide(self, context: DecisionContext, profile: UserProfile) -> SessionDecision:
        self.last_fallback = None
        outcome = self.review(context, profile)
        if outcome.fell_back:
            self.last_fallback = f"committee rejected {outcome.rounds_used} round(s)"
        return outcome.decision
