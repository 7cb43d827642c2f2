"""CSV and JSON outputs, the run manifest, and all-or-nothing output directories."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import shutil
import tempfile
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

from . import __version__
from .engine import SimulationResult, SweepResult

LOADS_HEADER = ("slot", "clock_time", "charged_kwh", "discharged_kwh", "total_load_kw")
DECISIONS_HEADER = ("session_id", "participate", "mode", "discharge_kwh", "start_slot", "r_min", "income")
SWEEP_HEADER = ("incentive", "total_discharged_kwh", "peak_load_kw", "peak_slot", "profit", "participation_rate")


def fmt(value: Any) -> str:
    """Locale-independent cell text; floats get 6 significant digits and never print as -0."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        text = f"{value:.6g}"
        return "0" if text == "-0" else text
    return str(value)


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} cells, header has {len(header)}")
        w.writerow([fmt(c) for c in row])
    return buf.getvalue()


def write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def write_json(path: Path, obj: Any) -> None:
    write_text(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def loads_rows(result: SimulationResult) -> list[tuple[Any, ...]]:
    g = result.grid
    return [
        (
            slot,
            g.clock(slot),
            float(result.charged_kwh[slot]),
            float(result.discharged_kwh[slot]),
            float(result.total_load_kw[slot]),
        )
        for slot in range(g.slots_per_day)
    ]


def decisions_rows(result: SimulationResult) -> list[tuple[Any, ...]]:
    rows = []
    for o in sorted(result.outcomes, key=lambda o: o.session.session_id):
        d = o.decision
        rows.append(
            (
                o.session.session_id,
                d.participate,
                d.mode.value,
                float(d.discharge_kwh),
                d.planned_start_slot,
                float(o.assessment.r_min),
                float(o.income),
            )
        )
    return rows


def sweep_rows(sweep: SweepResult) -> list[tuple[Any, ...]]:
    return [tuple(row[h] for h in SWEEP_HEADER) for row in sweep.rows()]


def summary(result: SimulationResult) -> dict[str, Any]:
    s = result.summary()
    s["unserved_sessions"] = sorted(result.unserved)
    s["fallback_sessions"] = [sid for sid, _ in result.fallbacks]
    return s


def level_filename(rate: float) -> str:
    return f"loads_{fmt(float(rate))}.csv"


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config_digest: str
    seed: int
    tool_version: str = __version__
    fixture_digests: dict[str, str] = field(default_factory=dict)
    started_at: str = ""
    finished_at: str = ""
    outputs: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class StagedOutput:
    """Collects files in a scratch directory next to the target; ``commit`` moves them in."""

    def __init__(self, staging: Path) -> None:
        self.staging = staging
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        if name not in self.files:
            self.files.append(name)
        return self.staging / name

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
        write_text(self.path(name), csv_text(header, rows))

    def json(self, name: str, obj: Any) -> None:
        write_json(self.path(name), obj)


@contextmanager
def staged_output(out_dir: str | Path) -> Iterator[StagedOutput]:
    """Nothing lands in ``out_dir`` unless the block finishes without raising."""
    out = Path(out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        staged = StagedOutput(tmp)
        yield staged
        out.mkdir(exist_ok=True)
        for name in staged.files:
            os.replace(tmp / name, out / name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
