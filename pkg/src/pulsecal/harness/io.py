"""Run-directory persistence: dataset CSVs, JSON reports and the manifest."""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import math
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

import pulsecal
from pulsecal.core import ScoreSeries
from pulsecal.scorekit import FACTORS, FactorVector, PlatformScoreSet
from pulsecal.simgen import Population, ShiftEvent

MANIFEST = "manifest.json"
SCORES, PLATFORMS, CLASSES, FACTOR_FILE, EVENTS = (
    "scores.csv", "platforms.csv", "classes.csv", "factors.csv", "events.csv")


class InputError(Exception):
    """Missing or unreadable input, or an unwritable output (CLI exit code 2)."""


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if x.is_integer() and abs(x) < 1e15:
            return str(int(x)) if x != 0 or math.copysign(1, x) > 0 else "0"
        return repr(x)
    return str(x)


def prepare_out_dir(path: str | Path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
        (out / MANIFEST).unlink(missing_ok=True)
    except OSError as exc:
        raise InputError(f"output directory {out} is not writable: {exc}") from None
    return out


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([fmt(v) for v in row])
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from None
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, obj) -> Path:
    try:
        path.write_text(json.dumps(_jsonable(obj), indent=2, allow_nan=False) + "\n")
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from None
    return path


def read_csv(path: str | Path, required: Sequence[str]) -> list[dict]:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = [c for c in required if c not in header]
            if missing:
                raise InputError(f"{path}: missing columns {missing}")
            return list(reader)
    except FileNotFoundError:
        raise InputError(f"missing input file {path}") from None
    except (OSError, csv.Error, UnicodeDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from None


def _float(path, row, key, allow_empty=False):
    text = (row.get(key) or "").strip()
    if text == "" and allow_empty:
        return None
    try:
        return float(text)
    except ValueError:
        raise InputError(f"{path}: bad number {text!r} in column {key}") from None


# -- dataset schemas ---------------------------------------------------------

def write_dataset(out: Path, population: Population,
                  events: dict[str, ShiftEvent] | None = None) -> list[Path]:
    events = events or {}
    paths = [
        write_csv(out / SCORES, ("agent_id", "t", "score"),
                  ((s.agent_id, t, v) for s in population.series
                   for t, v in zip(s.timestamps, s.scores))),
        write_csv(out / PLATFORMS, ("agent_id", "platform_id", "score"),
                  ((p.agent_id, k, v) for p in population.platforms for k, v in p.scores.items())),
    ]
    sigma = population.sigma_cross()
    paths.append(write_csv(
        out / CLASSES, ("agent_id", "class", "sigma_cross", "long_run_mean"),
        ((a, lab, sigma[a], m) for a, lab, m in
         zip(population.agent_ids, population.labels, population.long_run_means))))
    paths.append(write_csv(
        out / FACTOR_FILE, ("agent_id",) + FACTORS,
        ((a, *(getattr(fv, f) for f in FACTORS)) for a, fv in
         zip(population.agent_ids, population.factors))))
    paths.append(write_csv(out / EVENTS, ("agent_id", "time", "jump", "multiplier"),
                           ((a, e.time, e.jump, e.multiplier) for a, e in sorted(events.items()))))
    return paths


def read_scores(path: str | Path) -> dict[str, ScoreSeries]:
    rows = read_csv(path, ("agent_id", "t", "score"))
    by_agent: dict[str, list[tuple[float, float]]] = defaultdict(list)
    for row in rows:
        by_agent[row["agent_id"]].append((_float(path, row, "t"), _float(path, row, "score")))
    if not by_agent:
        raise InputError(f"{path}: no score rows")
    out = {}
    for agent in sorted(by_agent):
        pts = sorted(by_agent[agent])
        try:
            out[agent] = ScoreSeries(agent, np.array([p[0] for p in pts]), np.array([p[1] for p in pts]))
        except ValueError as exc:
            raise InputError(f"{path}: agent {agent}: {exc}") from None
    return out


def read_platforms(path: str | Path) -> dict[str, PlatformScoreSet]:
    rows = read_csv(path, ("agent_id", "platform_id", "score"))
    by_agent: dict[str, dict[str, float]] = defaultdict(dict)
    for row in rows:
        by_agent[row["agent_id"]][row["platform_id"]] = _float(path, row, "score")
    return {a: PlatformScoreSet(a, dict(sorted(p.items()))) for a, p in sorted(by_agent.items())}


def read_factors(path: str | Path) -> tuple[list[str], list[FactorVector]]:
    """Score matrix; an empty cell is a missing factor."""
    rows = read_csv(path, ("agent_id",) + FACTORS)
    ids, vectors = [], []
    for row in rows:
        vals = [_float(path, row, f, allow_empty=True) for f in FACTORS]
        try:
            vectors.append(FactorVector(*vals))
        except ValueError as exc:
            raise InputError(f"{path}: agent {row['agent_id']}: {exc}") from None
        ids.append(row["agent_id"])
    if not ids:
        raise InputError(f"{path}: empty score matrix")
    return ids, vectors


def read_classes(path: str | Path) -> dict[str, dict]:
    rows = read_csv(path, ("agent_id", "class", "sigma_cross", "long_run_mean"))
    return {r["agent_id"]: {"class": r["class"],
                            "sigma_cross": _float(path, r, "sigma_cross"),
                            "long_run_mean": _float(path, r, "long_run_mean", allow_empty=True)}
            for r in rows}


def read_events(path: str | Path) -> dict[str, ShiftEvent]:
    rows = read_csv(path, ("agent_id", "time", "jump", "multiplier"))
    return {r["agent_id"]: ShiftEvent(int(_float(path, r, "time")), _float(path, r, "jump"),
                                      _float(path, r, "multiplier")) for r in rows}


# -- manifest ----------------------------------------------------------------

def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def now_utc() -> dt.datetime:
    return dt.datetime.now(dt.timezone.utc)


def write_manifest(out: Path, command: str, config: dict, artifacts: Sequence[Path],
                   started: dt.datetime) -> Path:
    """Written last, so its presence marks a completed run."""
    finished = now_utc()
    manifest = {
        "command": command,
        "tool": "pulsecal",
        "tool_version": pulsecal.__version__,
        "config": config,
        "artifacts": {p.name: sha256_file(p) for p in sorted(artifacts, key=lambda p: p.name)},
        "started_utc": started.isoformat(timespec="seconds"),
        "finished_utc": finished.isoformat(timespec="seconds"),
        "duration_seconds": round((finished - started).total_seconds(), 3),
    }
    return write_json(out / MANIFEST, manifest)


def read_manifest(out: str | Path) -> dict:
    try:
        return json.loads((Path(out) / MANIFEST).read_text())
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read manifest in {out}: {exc}") from None
