import json
import math
import random

import pytest

from coml.errors import EmptyWindow
from coml.ids import IdSource
from coml.telemetry import (
    ActivityEvent,
    ActivityLog,
    GameEnded,
    GameStarted,
    LiveClassificationStarted,
    ModelTrained,
    SampleAdded,
    SampleDeleted,
    event_from_dict,
    event_to_dict,
    load_log,
    retrain_stats,
    save_log,
    timeline_export,
    timeline_svg,
    usage_counts,
)

IDS = IdSource(77)
DEV = [IDS.new_id() for _ in range(3)]
SID = [IDS.new_id() for _ in range(8)]
LAB = IDS.new_id()


def ev(device, ts, kind, ids=IDS):
    return ActivityEvent(event_id=ids.new_id(), device=device, ts=ts, kind=kind)


def test_record_appends():
    log = ActivityLog()
    log.record(ev(DEV[0], 10, ModelTrained(1, {LAB: (3, 4)})))
    assert len(log.events) == 1


def test_clock_regression_clamped():
    log = ActivityLog()
    log.record(ev(DEV[0], 100, GameStarted(1)))
    clamped = log.record(ev(DEV[0], 40, GameEnded(5.0)))
    assert clamped.ts == 100
    # other devices are unaffected
    other = log.record(ev(DEV[1], 40, GameStarted(2)))
    assert other.ts == 40


def test_interleaved_devices_stay_ordered_per_device(rng):
    log = ActivityLog()
    for i in range(300):
        device = rng.choice(DEV)
        ts = rng.randrange(0, 1000)  # random clocks, regressions included
        log.record(ev(device, ts, LiveClassificationStarted()))
    by_device = {}
    for event in log.events:
        by_device.setdefault(event.device, []).append(event.ts)
    for ts_list in by_device.values():
        assert ts_list == sorted(ts_list)


def test_ndjson_roundtrip(tmp_path):
    events = [
        ev(DEV[0], 1, SampleAdded(SID[0], LAB, "training", "a" * 64)),
        ev(DEV[0], 2, SampleDeleted(SID[0])),
        ev(DEV[1], 3, ModelTrained(2, {LAB: (1, 2)})),
        ev(DEV[1], 4, LiveClassificationStarted()),
        ev(DEV[2], 5, GameStarted(9)),
        ev(DEV[2], 6, GameEnded(42.5)),
    ]
    path = tmp_path / "log.ndjson"
    save_log(events, path)
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 6
    assert json.loads(lines[0])["kind"]["type"] == "SampleAdded"
    loaded = load_log(path)
    assert [event_to_dict(e) for e in loaded] == [event_to_dict(e) for e in events]


def test_replay_determinism(tmp_path):
    events = [ev(DEV[i % 3], i, ModelTrained(i, {})) for i in range(20)]
    path = tmp_path / "log.ndjson"
    save_log(events, path)
    first = retrain_stats(load_log(path))
    second = retrain_stats(load_log(path))
    assert first == second


def test_retrain_stats_single_device_13():
    events = [ev(DEV[0], i, ModelTrained(i + 1, {})) for i in range(13)]
    stats = retrain_stats(events)
    assert stats.per_device_totals == {DEV[0]: 13}
    assert stats.per_team_total == {"team": 13}


def test_retrain_stats_six_team_fixture():
    totals = [17, 27, 35, 45, 61, 75]
    logs = {}
    for t, total in enumerate(totals):
        device = DEV[t % 3]
        logs[f"team{t}"] = [ev(device, i, ModelTrained(i, {})) for i in range(total)]
    stats = retrain_stats(logs)
    assert sorted(stats.per_team_total.values()) == totals
    assert min(stats.per_team_total.values()) == 17 and max(stats.per_team_total.values()) == 75
    mean = sum(totals) / 6
    assert abs(stats.mean - mean) < 1e-9
    assert abs(stats.mean - 43.3) < 0.04  # reported to one decimal: 43.3
    sd = math.sqrt(sum((t - mean) ** 2 for t in totals) / 6)
    assert abs(stats.sd - sd) < 1e-9
    assert round(stats.sd) == 20


def test_retrain_stats_empty():
    stats = retrain_stats([])
    assert stats.per_team_total == {"team": 0}
    assert stats.per_device_totals == {}
    assert stats.mean == 0.0 and stats.sd == 0.0


def test_usage_counts():
    events = [
        ev(DEV[0], 1, LiveClassificationStarted()),
        ev(DEV[0], 2, LiveClassificationStarted()),
        ev(DEV[0], 3, GameStarted(0)),
    ]
    counts = usage_counts(events)
    assert counts[DEV[0]]["LiveClassificationStarted"] == 2
    assert counts[DEV[0]]["GameStarted"] == 1


def test_timeline_single_device_three_adds_one_train():
    events = [
        ev(DEV[0], 10, SampleAdded(SID[1], LAB, "training", "b" * 64)),
        ev(DEV[0], 20, SampleAdded(SID[2], LAB, "training", "c" * 64)),
        ev(DEV[0], 30, SampleAdded(SID[3], LAB, "testing", "d" * 64)),
        ev(DEV[0], 40, ModelTrained(1, {LAB: (1, 1)})),
    ]
    doc = timeline_export(events, (0, 100))
    assert len(doc["rows"]) == 1
    row = doc["rows"][0]
    assert row["device"] == DEV[0]
    dots = [e for e in row["events"] if not e["marker"]]
    markers = [e for e in row["events"] if e["marker"]]
    assert len(dots) == 3 and len(markers) == 1


def test_timeline_empty_window():
    events = [ev(DEV[0], 10, GameStarted(0))]
    with pytest.raises(EmptyWindow):
        timeline_export(events, (100, 200))


def test_timeline_counts_match_raw_log(rng):
    kinds = [
        lambda i: SampleAdded(SID[i % len(SID)], LAB, "training", f"{i:064x}"),
        lambda i: ModelTrained(i, {}),
        lambda i: LiveClassificationStarted(),
        lambda i: GameStarted(i),
    ]
    events = [ev(rng.choice(DEV), rng.randrange(0, 500), rng.choice(kinds)(i)) for i in range(120)]
    log = ActivityLog()
    for event in events:
        log.record(event)
    window = (100, 400)
    doc = timeline_export(log.events, window)
    exported = sum(len(row["events"]) for row in doc["rows"])
    raw = sum(1 for e in log.events if window[0] <= e.ts <= window[1])
    assert exported == raw


def test_timeline_redacts_deleted_digests():
    events = [
        ev(DEV[0], 10, SampleAdded(SID[4], LAB, "training", "e" * 64)),
        ev(DEV[0], 20, SampleAdded(SID[5], LAB, "training", "f" * 64)),
        ev(DEV[0], 500, SampleDeleted(SID[4])),  # deletion after the window still redacts
    ]
    doc = timeline_export(events, (0, 100))
    entries = doc["rows"][0]["events"]
    digests = {e.get("digest") for e in entries if e["kind"] == "SampleAdded"}
    assert digests == {None, "f" * 64}


def test_svg_emitter_smoke():
    events = [
        ev(DEV[0], 10, SampleAdded(SID[6], LAB, "training", "a" * 64)),
        ev(DEV[1], 20, ModelTrained(1, {})),
    ]
    svg = timeline_svg(timeline_export(events, (0, 30)))
    assert svg.startswith("<svg") and svg.endswith("</svg>")
    assert "circle" in svg and "line" in svg
