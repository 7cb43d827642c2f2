from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from conftest import FIXTURES
from scripted_llm import ScriptedResponder, StubServer
from evcs_sim.cli import build_parser, main
from evcs_sim.reporting import LOADS_HEADER, SWEEP_HEADER, file_sha256

SIM_FILES = ["config.resolved.json", "decisions.csv", "loads.csv", "manifest.json", "summary.json"]


@pytest.fixture(autouse=True)
def no_endpoint(monkeypatch):
    monkeypatch.delenv("EVCS_SIM_API_URL", raising=False)
    monkeypatch.delenv("EVCS_SIM_API_KEY", raising=False)


def test_simulate_writes_all_outputs(tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "--fleet-size", "20", "--incentive", "0.8", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == SIM_FILES
    rows = list(csv.reader((out / "loads.csv").open()))
    assert tuple(rows[0]) == LOADS_HEADER and len(rows) == 97
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate" and manifest["outputs"] == SIM_FILES
    resolved = json.loads((out / "config.resolved.json").read_text())
    assert resolved["fleet_size"] == 20 and resolved["tariff"]["incentive_per_kwh"] == 0.8


def test_sweep_outputs(tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "--fleet-size", "10", "--grid", "0:1:0.5", "--jobs", "1", "--out", str(out)]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"sweep.csv", "loads_0.csv", "loads_0.5.csv", "loads_1.csv", "summary.json", "manifest.json"} <= names
    rows = list(csv.reader((out / "sweep.csv").open()))
    assert tuple(rows[0]) == SWEEP_HEADER and [r[0] for r in rows[1:]] == ["0", "0.5", "1"]


def test_simulate_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["simulate", "--fleet-size", "15", "--seed", "4", "--out", str(tmp_path / name)]) == 0
    for f in ("loads.csv", "decisions.csv", "summary.json", "config.resolved.json"):
        assert file_sha256(tmp_path / "a" / f) == file_sha256(tmp_path / "b" / f)


@pytest.mark.parametrize(
    "argv,code",
    [
        (["simulate", "--fleet-size", "-1"], 2),
        (["simulate", "--agent", "llm"], 2),
        (["sweep", "--grid", "1:0:0.1"], 5),
        (["sweep", "--grid", "0:1:0"], 5),
        (["sweep", "--jobs", "0"], 2),
    ],
)
def test_error_exit_codes_leave_no_output(tmp_path, argv, code):
    out = tmp_path / "out"
    assert main([*argv, "--out", str(out)]) == code
    assert not out.exists()
    assert list(tmp_path.iterdir()) == []


def test_bad_config_file_exits_2(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"fleet": {"socc": [0.1, 0.2]}}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_invariant_violation_exits_4(tmp_path, monkeypatch):
    import evcs_sim.engine as engine
    from evcs_sim.physics import PowerSchedule

    def bad(decision, session, station, grid, plug_in_slot=None):
        p = np.zeros(grid.slots_per_day)
        p[10] = -15.0
        return PowerSchedule(session.session_id, p)

    monkeypatch.setattr(engine, "schedule_session", bad)
    out = tmp_path / "o"
    assert main(["simulate", "--fleet-size", "3", "--out", str(out)]) == 4
    assert not out.exists()


def test_replay_run_and_miss(tmp_path, capsys):
    ok = tmp_path / "ok"
    argv = ["simulate", "--agent", "llm", "--incentive", "0.8"]
    assert main([*argv, "--replay", str(FIXTURES / "llm_normal.jsonl"), "--out", str(ok)]) == 0
    manifest = json.loads((ok / "manifest.json").read_text())
    assert manifest["fixture_digests"] == {"llm_normal.jsonl": file_sha256(FIXTURES / "llm_normal.jsonl")}

    miss = tmp_path / "miss"
    assert main([*argv, "--replay", str(FIXTURES / "llm_miss.jsonl"), "--out", str(miss)]) == 3
    assert not miss.exists()
    assert "miss " in capsys.readouterr().err


def test_missing_fixture_file_is_a_config_error(tmp_path):
    code = main(["simulate", "--agent", "llm", "--replay", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "o")])
    assert code == 2


def test_fixtures_verify(capsys):
    args = ["fixtures", "verify", "--incentive", "0.8"]
    assert main([*args, "--fixture", str(FIXTURES / "llm_normal.jsonl")]) == 0
    assert "coverage: 100.0%" in capsys.readouterr().out
    assert main([*args, "--fixture", str(FIXTURES / "llm_miss.jsonl")]) == 3
    assert "misses: " in capsys.readouterr().out


def test_fixtures_record_against_stub(tmp_path, monkeypatch):
    path = tmp_path / "rec.jsonl"
    with StubServer(ScriptedResponder()) as stub:
        monkeypatch.setenv("EVCS_SIM_API_URL", stub.url)
        args = ["--fleet-size", "5", "--incentive", "1.0", "--fixture", str(path)]
        assert main(["fixtures", "record", *args]) == 0
    assert path.exists()
    assert main(["fixtures", "verify", *args]) == 0


def test_record_without_endpoint_exits_6(tmp_path):
    assert main(["fixtures", "record", "--fleet-size", "2", "--fixture", str(tmp_path / "x.jsonl")]) == 6


def test_record_with_failing_endpoint_exits_6(tmp_path, monkeypatch):
    with StubServer(ScriptedResponder(), fail_first=10_000, fail_status=400) as stub:
        monkeypatch.setenv("EVCS_SIM_API_URL", stub.url)
        code = main(["fixtures", "record", "--fleet-size", "1", "--incentive", "1.0",
                     "--fixture", str(tmp_path / "x.jsonl")])
    assert code == 6
    assert not (tmp_path / "x.jsonl").exists()


def test_parser_help_lists_commands():
    text = build_parser().format_help()
    for cmd in ("simulate", "sweep", "fixtures"):
        assert cmd in text
