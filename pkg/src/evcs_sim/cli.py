"""Command-line entry point: ``evcs-sim simulate | sweep | fixtures record|verify``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .config import RunConfig, load_config, parse_grid, with_overrides
from .engine import SimulationResult, SweepResult, run_scenario, sweep_incentive
from .errors import (
    ConfigError,
    EvcsSimError,
    FixtureMiss,
    GridSpecError,
    SimulationDefect,
    TransportError,
)
from .llm.agents import LlmAgent
from .llm.retrieval import Corpus
from .llm.transport import ChatClient, Fixture, HttpChatClient, RecordingClient, ReplayClient
from .profiles import BaselineAgent
from .reporting import (
    DECISIONS_HEADER,
    LOADS_HEADER,
    SWEEP_HEADER,
    RunManifest,
    decisions_rows,
    file_sha256,
    level_filename,
    loads_rows,
    staged_output,
    summary,
    sweep_rows,
    utc_now,
)

log = logging.getLogger("evcs_sim")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FIXTURE_MISS = 3
EXIT_INVARIANT = 4
EXIT_GRID = 5
EXIT_TRANSPORT = 6


class ReplayMisses(EvcsSimError):
    def __init__(self, misses: Sequence[str]):
        self.misses = list(dict.fromkeys(misses))
        super().__init__(f"{len(self.misses)} request(s) missing from the replay fixture")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON scenario config (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--agent", choices=("baseline", "llm"), help="decision agent")
    p.add_argument("--accounting", choices=("consistent", "literal"), help="profit/payoff accounting mode")
    p.add_argument("--fleet-size", type=int, dest="fleet_size", help="override the number of vehicles")
    p.add_argument("--replay", type=Path, help="serve LLM responses from this fixture file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evcs-sim", description="EV charging station V2G demand-response simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one day at a single incentive level")
    _common(sim)
    sim.add_argument("--incentive", type=float, help="incentive per discharged kWh")
    sim.add_argument("--out", type=Path, default=Path("out"), help="output directory")

    sw = sub.add_parser("sweep", help="run the same fleet across an incentive grid")
    _common(sw)
    sw.add_argument("--grid", help="start:stop:step, both ends inclusive (default from config)")
    sw.add_argument("--jobs", type=int, default=None, help="parallel levels (default: CPU count)")
    sw.add_argument("--out", type=Path, default=Path("out"), help="output directory")

    fx = sub.add_parser("fixtures", help="record or verify LLM replay fixtures")
    fx.add_argument("action", choices=("record", "verify"))
    fx.add_argument("--config", type=Path)
    fx.add_argument("--seed", type=int)
    fx.add_argument("--fleet-size", type=int, dest="fleet_size")
    fx.add_argument("--incentive", type=float)
    fx.add_argument("--grid", help="record/verify a whole sweep instead of one level")
    fx.add_argument("--fixture", type=Path, required=True, help="fixture file to write or check")
    return parser


def _resolve(args: argparse.Namespace) -> RunConfig:
    run = load_config(args.config)
    return with_overrides(
        run,
        seed=getattr(args, "seed", None),
        fleet_size=getattr(args, "fleet_size", None),
        agent=getattr(args, "agent", None),
        accounting_mode=getattr(args, "accounting", None),
        incentive=getattr(args, "incentive", None),
    )


def _corpus(run: RunConfig) -> Corpus:
    d = run.scenario.llm.corpus_dir
    if d is None:
        return Corpus.bundled()
    if not Path(d).is_dir():
        raise ConfigError("llm.corpus_dir", f"{d} is not a directory")
    return Corpus.from_dir(d)


def _live_client(run: RunConfig) -> HttpChatClient:
    s = run.scenario.llm
    return HttpChatClient.from_env(timeout_s=s.timeout_s, max_retries=s.max_retries)


def _agent(run: RunConfig, client: ChatClient | None) -> Any:
    if run.scenario.agent_kind == "baseline":
        return BaselineAgent()
    assert client is not None
    return LlmAgent.from_settings(client, run.scenario.llm, _corpus(run))


def _client_for(run: RunConfig, replay: Path | None) -> ChatClient | None:
    if run.scenario.agent_kind != "llm":
        return None
    if replay is not None:
        try:
            return ReplayClient(Fixture.load(replay))
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError("--replay", f"cannot load fixture {replay}: {exc}") from exc
    try:
        return _live_client(run)
    except TransportError as exc:
        raise ConfigError("--agent", f"llm agent needs --replay or a live endpoint ({exc})") from exc


def _check_replay(client: ChatClient | None) -> None:
    if isinstance(client, ReplayClient) and client.misses:
        raise ReplayMisses(client.misses)


def _manifest(command: str, run: RunConfig, replay: Path | None, started: str, files: list[str]) -> dict[str, Any]:
    fixtures = {}
    if replay is not None and run.scenario.agent_kind == "llm":
        fixtures[replay.name] = file_sha256(replay)
    m = RunManifest(command, run.digest(), run.scenario.seed, fixture_digests=fixtures, started_at=started)
    m.outputs = sorted(set(files) | {"manifest.json"})
    m.finished_at = utc_now()
    return m.to_dict()


def cmd_simulate(args: argparse.Namespace) -> int:
    started = utc_now()
    run = _resolve(args)
    client = _client_for(run, args.replay)
    result = run_scenario(run.scenario, _agent(run, client))
    _check_replay(client)
    with staged_output(args.out) as out:
        out.csv("loads.csv", LOADS_HEADER, loads_rows(result))
        out.csv("decisions.csv", DECISIONS_HEADER, decisions_rows(result))
        out.json("summary.json", summary(result))
        out.json("config.resolved.json", run.to_dict())
        out.json("manifest.json", _manifest("simulate", run, args.replay, started, list(out.files)))
    _report(result)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    started = utc_now()
    grid = parse_grid(args.grid) if args.grid else None
    run = _resolve(args)
    grid = grid or run.sweep_grid
    client = _client_for(run, args.replay)
    jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
    if jobs < 1:
        raise ConfigError("--jobs", "must be at least 1")
    sweep = sweep_incentive(run.scenario, grid, _agent(run, client), jobs=jobs)
    _check_replay(client)
    with staged_output(args.out) as out:
        out.csv("sweep.csv", SWEEP_HEADER, sweep_rows(sweep))
        for res in sweep.results:
            out.csv(level_filename(res.incentive_per_kwh), LOADS_HEADER, loads_rows(res))
        out.json("summary.json", {"levels": [summary(r) for r in sweep.results]})
        out.json("config.resolved.json", run.to_dict())
        out.json("manifest.json", _manifest("sweep", run, args.replay, started, list(out.files)))
    _report_sweep(sweep)
    return EXIT_OK


def _run_llm(run: RunConfig, client: ChatClient, grid: tuple[float, ...] | None) -> SimulationResult | SweepResult:
    agent = LlmAgent.from_settings(client, run.scenario.llm, _corpus(run))
    if grid is None:
        return run_scenario(run.scenario, agent)
    return sweep_incentive(run.scenario, grid, agent, jobs=1)


def cmd_fixtures(args: argparse.Namespace) -> int:
    grid = parse_grid(args.grid) if args.grid else None
    run = with_overrides(_resolve(args), agent="llm")
    if args.action == "record":
        try:
            live = _live_client(run)
        except TransportError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_TRANSPORT
        recorder = RecordingClient(live, run.scenario.llm.model)
        _run_llm(run, recorder, grid)
        live.close()
        if recorder.failures:
            print(f"error: {len(recorder.failures)} request(s) failed: {recorder.failures[0]}", file=sys.stderr)
            return EXIT_TRANSPORT
        recorder.fixture.meta["config_digest"] = run.digest()
        args.fixture.parent.mkdir(parents=True, exist_ok=True)
        recorder.fixture.dump(args.fixture)
        print(f"recorded {len(recorder.fixture.responses)} exchange(s) to {args.fixture}")
        return EXIT_OK

    try:
        replay = ReplayClient(Fixture.load(args.fixture))
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError("--fixture", f"cannot load {args.fixture}: {exc}") from exc
    _run_llm(run, replay, grid)
    hits, misses = len(replay.hits), len(replay.misses)
    total = hits + misses
    pct = 100.0 * hits / total if total else 100.0
    print(f"requests: {total}  hits: {hits}  misses: {misses}  coverage: {pct:.1f}%")
    if misses:
        for fp in dict.fromkeys(replay.misses):
            print(f"miss {fp}")
        return EXIT_FIXTURE_MISS
    return EXIT_OK


def _report(result: SimulationResult) -> None:
    s = result.summary()
    print(
        f"incentive {s['incentive_per_kwh']:g}: participation {s['participation_rate']:.0%}, "
        f"discharged {s['total_discharged_kwh']:.1f} kWh, peak {s['peak_load_kw']:.1f} kW at {s['peak_time']}, "
        f"profit {s['profit']:.2f}"
    )


def _report_sweep(sweep: SweepResult) -> None:
    for r in sweep.results:
        _report(r)


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "fixtures": cmd_fixtures}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ReplayMisses as exc:
        print(f"error: {exc}", file=sys.stderr)
        for fp in exc.misses:
            print(f"miss {fp}", file=sys.stderr)
        return EXIT_FIXTURE_MISS
    except FixtureMiss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIXTURE_MISS
    except SimulationDefect as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except GridSpecError as exc:
        print(f"grid error: {exc}", file=sys.stderr)
        return EXIT_GRID
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except EvcsSimError as exc:
        print(f"invariant violation: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
