"""A deterministic stand-in for a chat model, plus a tiny HTTP server that speaks the wire format.

The responder reads the JSON payload embedded in each prompt and answers with
a rule, so fixtures recorded through it are reproducible and each scripted
behaviour exercises a known path of the agent.
"""

from __future__ import annotations

import json
import math
import re
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable

from evcs_sim.llm.transport import ChatRequest

BLOCK = re.compile(r"```json\n(.*?)\n```", re.S)
LARGE_DISCHARGE_KWH = 20.0


def _blocks(text: str) -> list[dict[str, Any]]:
    return [json.loads(b) for b in BLOCK.findall(text)]


def _fits(ctx: dict[str, Any], energy: float, start: int) -> bool:
    v, st = ctx["vehicle"], ctx["station"]
    hours = ctx["slot_minutes"] / 60
    n_dis = math.ceil(energy / (v["eta_discharge"] * st["nominal_discharge_kw"] * hours) - 1e-9)
    if start + n_dis > ctx["dr_window"]["end_slot"]:
        return False
    stored = v["soc_current"] * v["capacity_kwh"]
    recharge = max(v["soc_target"] * v["capacity_kwh"] - (stored - energy), 0.0)
    n_chg = math.ceil(recharge / (v["eta_charge"] * st["nominal_charge_kw"] * hours) - 1e-9)
    return start + n_dis + n_chg <= min(v["required_by_slot"], 1440 // ctx["slot_minutes"])


def scripted_decision(ctx: dict[str, Any], cap_kwh: float | None = None) -> dict[str, Any]:
    """Participate when the incentive beats the degradation cost with the risk premium on top."""
    v, p = ctx["vehicle"], ctx["profile"]
    now, win = ctx["current_slot"], ctx["dr_window"]
    start = max(now, win["start_slot"])
    threshold = p["degradation_cost_per_kwh"] * (1 + p["risk_premium"])
    energy = v["dischargeable_kwh"]
    if cap_kwh is not None:
        energy = min(energy, cap_kwh)
    hours = ctx["slot_minutes"] / 60
    room = max(win["end_slot"] - start, 0) * v["eta_discharge"] * ctx["station"]["nominal_discharge_kw"] * hours
    energy = min(energy, room)
    while energy > 0.5 and not _fits(ctx, energy, start):
        energy = math.floor(energy * 0.5 * 1000) / 1000
    if ctx["incentive_per_kwh"] >= threshold and energy > 0.5 and _fits(ctx, energy, start):
        return {
            "participate": True,
            "mode": "v2g",
            "discharge_kwh": energy,
            "planned_start_slot": start,
            "rationale": f"incentive {ctx['incentive_per_kwh']} covers threshold {threshold:.3f}",
        }
    return {
        "participate": False,
        "mode": "charge_only",
        "discharge_kwh": 0,
        "planned_start_slot": now,
        "rationale": "incentive too low or no room to discharge",
    }


@dataclass
class ScriptedResponder:
    """``behaviour``: normal, schema_error (prose for 60 kWh vehicles), reject_all."""

    behaviour: str = "normal"
    calls: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __call__(self, body: dict[str, Any]) -> str:
        with self.lock:
            self.calls += 1
        system, user = body["messages"][0]["content"], body["messages"][1]["content"]
        if "committee" in system:
            role = re.match(r"You are the (.+?) expert", system).group(1).replace(" ", "_")
            return self.expert(role, user)
        return self.decide(user)

    def decide(self, user: str) -> str:
        ctx = _blocks(user)[0]
        if self.behaviour == "schema_error" and ctx["vehicle"]["capacity_kwh"] == 60:
            return "I think this driver should probably take part, the offer looks fine to me."
        revising = "Objections:" in user
        decision = scripted_decision(ctx, LARGE_DISCHARGE_KWH if revising else None)
        return "Here is my decision.\n```json\n" + json.dumps(decision) + "\n```"

    def expert(self, role: str, user: str) -> str:
        blocks = _blocks(user)
        decision, ctx = blocks[0], blocks[1]
        cited = re.findall(r"^\[([a-z_]+)\]", user, re.M)
        if self.behaviour == "reject_all":
            verdict, why = "reject", "scripted rejection"
        elif role in ("economics", "comprehensive") and decision["discharge_kwh"] > LARGE_DISCHARGE_KWH:
            verdict, why = "reject", f"discharging over {LARGE_DISCHARGE_KWH:g} kWh wears the battery too much"
        elif role == "power_systems" and decision["discharge_kwh"] > ctx["vehicle"]["dischargeable_kwh"] + 1e-6:
            verdict, why = "reject", "discharge would cut into the trip reserve"
        else:
            verdict, why = "approve", "acceptable"
        return json.dumps({"verdict": verdict, "reasoning": why, "citations": cited[:1]})


class ScriptedClient:
    """In-process client with the same contract as the HTTP one."""

    def __init__(self, responder: Callable[[dict[str, Any]], str]) -> None:
        self.responder = responder

    def complete(self, request: ChatRequest) -> str:
        return self.responder(request.body())


class StubServer:
    """OpenAI-compatible ``/chat/completions`` endpoint on localhost.

    ``fail_first`` makes the first N requests answer with HTTP ``fail_status``.
    """

    def __init__(self, responder: Callable[[dict[str, Any]], str], *, fail_first: int = 0, fail_status: int = 503):
        self.responder = responder
        self.fail_first = fail_first
        self.fail_status = fail_status
        self.requests: list[dict[str, Any]] = []
        self.auth: list[str | None] = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self) -> None:  # noqa: N802
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                with lock:
                    stub.requests.append(body)
                    stub.auth.append(self.headers.get("Authorization"))
                    failing = len(stub.requests) <= stub.fail_first
                if failing:
                    self._send(stub.fail_status, {"error": "unavailable"})
                    return
                text = stub.responder(body)
                self._send(200, {"choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]})

            def _send(self, status: int, obj: Any) -> None:
                data = json.dumps(obj).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args: Any) -> None:
                pass

        lock = threading.Lock()
        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}/v1/chat/completions"

    def __enter__(self) -> StubServer:
        self.thread.start()
        return self

    def __exit__(self, *exc: Any) -> None:
        self.server.shutdown()
        self.server.server_close()
