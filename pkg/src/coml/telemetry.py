"""Append-only activity log and the analytics computed from it.

Every user-visible action lands here as one NDJSON line: sample added (with
its split and blob digest), sample deleted, model trained (with per-label
test verdict counts), live classification started, game started and ended.
Each event carries a timestamp and the device id; per-device timestamps are
kept monotone by clamping clock regressions.

Deleted samples are logged deliberately, and their blob digests are redacted
from timeline exports so deleted image data never leaves the log owner.
"""

from __future__ import annotations

import json
import math
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Mapping, Union

from .errors import EmptyWindow, MalformedOp
from .ids import DeviceId, LabelId, SampleId


@dataclass(frozen=True)
class SampleAdded:
    sample_id: SampleId
    label: LabelId
    split: str  # "training" | "testing"
    digest: str | None = None  # blob digest for timeline thumbnails


@dataclass(frozen=True)
class SampleDeleted:
    sample_id: SampleId


@dataclass(frozen=True)
class ModelTrained:
    version: int
    per_label_test_correct: dict[LabelId, tuple[int, int]]  # label -> (correct, total)


@dataclass(frozen=True)
class LiveClassificationStarted:
    pass


@dataclass(frozen=True)
class GameStarted:
    seed: int


@dataclass(frozen=True)
class GameEnded:
    total_score: float


EventKind = Union[SampleAdded, SampleDeleted, ModelTrained, LiveClassificationStarted, GameStarted, GameEnded]


@dataclass
class ActivityEvent:
    event_id: str
    device: DeviceId
    ts: int  # wall-clock ms
    kind: EventKind


def event_to_dict(event: ActivityEvent) -> dict:
    kind = event.kind
    if isinstance(kind, SampleAdded):
        payload = {"type": "SampleAdded", "sample_id": kind.sample_id, "label": kind.label, "split": kind.split, "digest": kind.digest}
    elif isinstance(kind, SampleDeleted):
        payload = {"type": "SampleDeleted", "sample_id": kind.sample_id}
    elif isinstance(kind, ModelTrained):
        payload = {
            "type": "ModelTrained",
            "version": kind.version,
            "per_label_test_correct": {label: [c, t] for label, (c, t) in sorted(kind.per_label_test_correct.items())},
        }
    elif isinstance(kind, LiveClassificationStarted):
        payload = {"type": "LiveClassificationStarted"}
    elif isinstance(kind, GameStarted):
        payload = {"type": "GameStarted", "seed": kind.seed}
    elif isinstance(kind, GameEnded):
        payload = {"type": "GameEnded", "total_score": kind.total_score}
    else:
        raise MalformedOp(f"unknown event kind {type(kind).__name__}")
    return {"event_id": event.event_id, "device": event.device, "ts": event.ts, "kind": payload}


def event_from_dict(doc: dict) -> ActivityEvent:
    kind_doc = doc.get("kind")
    if not isinstance(kind_doc, dict):
        raise MalformedOp("event.kind must be an object")
    kind_type = kind_doc.get("type")
    if kind_type == "SampleAdded":
        kind: EventKind = SampleAdded(kind_doc["sample_id"], kind_doc["label"], kind_doc["split"], kind_doc.get("digest"))
    elif kind_type == "SampleDeleted":
        kind = SampleDeleted(kind_doc["sample_id"])
    elif kind_type == "ModelTrained":
        kind = ModelTrained(
            kind_doc["version"],
            {label: (pair[0], pair[1]) for label, pair in kind_doc.get("per_label_test_correct", {}).items()},
        )
    elif kind_type == "LiveClassificationStarted":
        kind = LiveClassificationStarted()
    elif kind_type == "GameStarted":
        kind = GameStarted(kind_doc["seed"])
    elif kind_type == "GameEnded":
        kind = GameEnded(kind_doc["total_score"])
    else:
        raise MalformedOp(f"unknown event kind {kind_type!r}")
    return ActivityEvent(event_id=doc["event_id"], device=doc["device"], ts=doc["ts"], kind=kind)


class ActivityLog:
    """Single-appender event log, optionally mirrored to an NDJSON file."""

    def __init__(self, path: str | Path | None = None):
        self.events: list[ActivityEvent] = []
        self._last_ts: dict[DeviceId, int] = {}
        self._file: IO[str] | None = None
        self._lock = threading.Lock()
        if path is not None:
            self._file = open(path, "a", encoding="utf-8")

    def record(self, event: ActivityEvent) -> ActivityEvent:
        """Append one event; a regressing device clock is clamped forward."""
        with self._lock:
            floor_ts = self._last_ts.get(event.device)
            if floor_ts is not None and event.ts < floor_ts:
                event = ActivityEvent(event.event_id, event.device, floor_ts, event.kind)
            self._last_ts[event.device] = event.ts
            self.events.append(event)
            if self._file is not None:
                self._file.write(json.dumps(event_to_dict(event), separators=(",", ":"), ensure_ascii=False) + "\n")
                self._file.flush()
                os.fsync(self._file.fileno())
        return event

    def close(self):
        if self._file is not None:
            self._file.close()
            self._file = None


def save_log(events: Iterable[ActivityEvent], path: str | Path):
    with open(path, "w", encoding="utf-8") as f:
        for event in events:
            f.write(json.dumps(event_to_dict(event), separators=(",", ":"), ensure_ascii=False) + "\n")


def load_log(path: str | Path) -> list[ActivityEvent]:
    events = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                events.append(event_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise MalformedOp(f"{path}:{line_no}: bad event: {exc}") from exc
    return events


# --- analytics ---------------------------------------------------------------


@dataclass
class RetrainStats:
    per_team_total: dict[str, int]
    per_device_totals: dict[DeviceId, int]
    mean: float
    sd: float  # population sd over team totals


EventsByTeam = Mapping[str, Iterable[ActivityEvent]]


def retrain_stats(logs: EventsByTeam | Iterable[ActivityEvent]) -> RetrainStats:
    """Count ModelTrained events per device and per team.

    Accepts either one event stream (a single team) or a mapping of team
    name -> events. Mean and sd summarize the team totals.
    """
    if not isinstance(logs, Mapping):
        logs = {"team": list(logs)}
    per_team: dict[str, int] = {}
    per_device: dict[DeviceId, int] = {}
    for team, events in logs.items():
        count = 0
        for event in events:
            if isinstance(event.kind, ModelTrained):
                count += 1
                per_device[event.device] = per_device.get(event.device, 0) + 1
        per_team[team] = count
    totals = list(per_team.values())
    mean = sum(totals) / len(totals) if totals else 0.0
    sd = math.sqrt(sum((t - mean) ** 2 for t in totals) / len(totals)) if totals else 0.0
    return RetrainStats(per_team, per_device, mean, sd)


def usage_counts(events: Iterable[ActivityEvent]) -> dict[str, dict[str, int]]:
    """Frequency of use per device: how often each event kind occurred."""
    counts: dict[str, dict[str, int]] = {}
    for event in events:
        kind = type(event.kind).__name__
        counts.setdefault(event.device, {}).setdefault(kind, 0)
        counts[event.device][kind] += 1
    return counts


def timeline_export(events: Iterable[ActivityEvent], window: tuple[int, int]) -> dict:
    """Per-device activity rows for the window, train events as markers.

    Blob digests of samples that were later deleted are redacted (the log
    knows its own deletions). Raises EmptyWindow when nothing falls inside.
    """
    start, end = window
    events = list(events)
    deleted_ids = {e.kind.sample_id for e in events if isinstance(e.kind, SampleDeleted)}
    rows: dict[DeviceId, list[dict]] = {}
    for event in events:
        if not (start <= event.ts <= end):
            continue
        kind = type(event.kind).__name__
        entry = {"ts": event.ts, "kind": kind, "marker": isinstance(event.kind, ModelTrained)}
        if isinstance(event.kind, SampleAdded):
            entry["digest"] = None if event.kind.sample_id in deleted_ids else event.kind.digest
        rows.setdefault(event.device, []).append(entry)
    if not rows:
        raise EmptyWindow(f"no events in [{start}, {end}]")
    return {
        "window": {"start_ms": start, "end_ms": end},
        "rows": [{"device": device, "events": entries} for device, entries in sorted(rows.items())],
    }


_SVG_COLORS = {
    "SampleAdded": "#4c9f70",
    "SampleDeleted": "#c0392b",
    "LiveClassificationStarted": "#2980b9",
    "GameStarted": "#8e44ad",
    "GameEnded": "#8e44ad",
}


def timeline_svg(doc: dict, width: int = 960, row_height: int = 28) -> str:
    """Render a timeline export as a standalone SVG document."""
    start = doc["window"]["start_ms"]
    end = doc["window"]["end_ms"]
    span = max(1, end - start)
    rows = doc["rows"]
    height = row_height * (len(rows) + 1)
    margin = 120

    def x(ts: int) -> float:
        return margin + (width - margin - 10) * (ts - start) / span

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for i, row in enumerate(rows):
        y = row_height * (i + 1)
        parts.append(f'<text x="4" y="{y + 4}">{row["device"][:8]}</text>')
        parts.append(f'<line x1="{margin}" y1="{y}" x2="{width - 10}" y2="{y}" stroke="#ddd"/>')
        for entry in row["events"]:
            cx = x(entry["ts"])
            if entry["marker"]:
                parts.append(f'<line x1="{cx:.1f}" y1="{y - 10}" x2="{cx:.1f}" y2="{y + 10}" stroke="#1a53c0" stroke-width="2"/>')
            else:
                color = _SVG_COLORS.get(entry["kind"], "#777")
                parts.append(f'<circle cx="{cx:.1f}" cy="{y}" r="3.5" fill="{color}"/>')
    parts.append("</svg>")
    return "\n".join(parts)
