#!/usr/bin/env python3
"""Event-log analytics: retrain frequency and activity timelines.

Fabricates three synthetic team logs (one device trio each), then computes
the retrain-count statistics and renders one team's timeline to SVG.
"""

import tempfile
from pathlib import Path

from coml.ids import IdSource
from coml.telemetry import (
    ActivityEvent,
    GameEnded,
    GameStarted,
    ModelTrained,
    SampleAdded,
    retrain_stats,
    timeline_export,
    timeline_svg,
    usage_counts,
)

ids = IdSource(2023)


def team_log(n_devices, retrains_per_device, games):
    devices = [ids.new_id() for _ in range(n_devices)]
    label = ids.new_id()
    events, ts = [], 0
    for r in range(retrains_per_device):
        for device in devices:
            ts += 700
            events.append(ActivityEvent(ids.new_id(), device, ts, SampleAdded(ids.new_id(), label, "training", "ab" * 32)))
            ts += 300
            events.append(ActivityEvent(ids.new_id(), device, ts, ModelTrained(r + 1, {label: (3, 4)})))
    for g in range(games):
        ts += 1000
        events.append(ActivityEvent(ids.new_id(), devices[g % n_devices], ts, GameStarted(g)))
        ts += 90_000
        events.append(ActivityEvent(ids.new_id(), devices[g % n_devices], ts, GameEnded(10.0 * g)))
    return events


logs = {
    "team-plants": team_log(3, 6, games=1),
    "team-foodwaste": team_log(3, 25, games=11),
    "team-makeup": team_log(3, 13, games=4),
}

stats = retrain_stats(logs)
print("retrains per team: ", stats.per_team_total)
print(f"mean {stats.mean:.1f}, sd {stats.sd:.1f}")
print("per-device retrains:", sorted(stats.per_device_totals.values()))

counts = usage_counts(logs["team-foodwaste"])
games_played = sum(c.get("GameStarted", 0) for c in counts.values())
print("team-foodwaste game sessions:", games_played)

events = logs["team-makeup"]
doc = timeline_export(events, (0, max(e.ts for e in events)))
out = Path(tempfile.gettempdir()) / "coml-timeline.svg"
out.write_text(timeline_svg(doc))
rows = {row["device"][:8]: len(row["events"]) for row in doc["rows"]}
print("timeline rows (events per device):", rows)
print("wrote", out)
