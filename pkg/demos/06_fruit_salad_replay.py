#!/usr/bin/env python3
"""The bundled fruit-salad replay: a scripted two-device collection session.

Generates the fixture images (apple/grapefruit/mango/orange swatches with
the dashboard's badge counts: 22/7/21/20), writes the session script, replays
it deterministically, and prints the summary row. Run it twice and diff the
summaries: they are byte-identical for a fixed seed.
"""

import json
import random
import tempfile
from pathlib import Path

from coml.image import ImageBlob
from coml.scripting import run_script

COUNTS = {"apple": 22, "grapefruit": 7, "mango": 21, "orange": 20}
COLORS = {
    "apple": (200, 30, 30),
    "grapefruit": (240, 150, 130),
    "mango": (250, 190, 60),
    "orange": (240, 140, 20),
}


def swatch(rng, base, size=8):
    pixels = bytes(
        max(0, min(255, base[ch] + rng.randrange(-25, 26))) for _ in range(size * size) for ch in range(3)
    )
    return ImageBlob(size, size, pixels)


root = Path(tempfile.mkdtemp(prefix="fruit-salad-"))
rng = random.Random(11)
for name, count in COUNTS.items():
    d = root / "images" / name
    d.mkdir(parents=True)
    for i in range(count):
        (d / f"{i:03d}.ppm").write_bytes(swatch(rng, COLORS[name]).to_ppm())
    t = root / "images" / f"{name}-test"
    t.mkdir()
    for i in range(4):
        (t / f"{i:03d}.ppm").write_bytes(swatch(rng, COLORS[name]).to_ppm())

directives = [
    {"at_ms": 0, "device": "d1", "directive": "join"},
    {"at_ms": 10, "device": "d2", "directive": "join"},
    {"at_ms": 100, "device": "d1", "directive": "capture", "dir": "images/apple", "label": "apple", "split": "training"},
    {"at_ms": 200, "device": "d2", "directive": "capture", "dir": "images/grapefruit", "label": "grapefruit", "split": "training"},
    {"at_ms": 300, "device": "d1", "directive": "capture", "dir": "images/mango", "label": "mango", "split": "training"},
    {"at_ms": 400, "device": "d2", "directive": "capture", "dir": "images/orange", "label": "orange", "split": "training"},
]
at = 500
for name in COUNTS:
    directives.append(
        {"at_ms": at, "device": "d2", "directive": "capture", "dir": f"images/{name}-test", "label": name, "split": "testing"}
    )
    at += 100
directives.append({"at_ms": at, "device": "d1", "directive": "retrain"})
script = root / "fruit-salad.ndjson"
script.write_text("\n".join(json.dumps(d) for d in directives) + "\n")

result = run_script(script, seed=6, out_dir=root / "out")
summary = result["summary"]
print("label counts:", {k: v["training"] for k, v in summary["label_counts"].items()})
print("training/testing totals:", summary["training_images"], "/", summary["testing_images"])
print("weighted accuracy after d1's retrain:", summary["weighted_accuracy"])
print("replica digests:", set(summary["final_digests"].values()))
print("artifacts in", root / "out")
