#!/usr/bin/env python3
"""Train a classifier on synthetic swatches and read the testing dashboard.

Builds a three-label dataset (color swatches with jitter), trains the local
softmax model, and walks through the evaluation surfaces: per-record
verdicts, misclassified-first ordering, weighted accuracy, and balance.
"""

import random
import tempfile

from coml.agent import Agent
from coml.domain import Split
from coml.evaluation import balance_stats
from coml.image import ImageBlob
from coml.server import SyncServer

COLORS = {"cactus": (40, 160, 60), "orchid": (220, 160, 220), "pothos": (90, 190, 90)}


def swatch(rng, base, size=24):
    pixels = bytes(
        max(0, min(255, base[ch] + rng.randrange(-30, 31))) for _ in range(size * size) for ch in range(3)
    )
    return ImageBlob(size, size, pixels)


rng = random.Random(3)
with tempfile.TemporaryDirectory() as data_dir:
    server = SyncServer(data_dir).start()
    agent = Agent()
    agent.create_project(server.address, "plants")

    for name, color in COLORS.items():
        label = agent.add_label(name)
        for _ in range(20):
            agent.capture(label, swatch(rng, color), Split.TRAINING)
        for _ in range(6):
            agent.capture(label, swatch(rng, color), Split.TESTING)
    agent.wait_synced()

    model = agent.retrain(seed=1)
    print(f"model v{model.version}: {model.train_sample_count} training images, {len(model.label_order)} labels")

    stats = agent.stats()
    print(f"weighted accuracy: {stats['weighted_accuracy']:.2f}")
    for label_id, row in stats["labels"].items():
        print(f"  {row['name']:>8}: {row['training_count']} train / {row['testing_count']} test "
              f"({row['train_pct']:.1f}% / {row['test_pct']:.1f}%)")

    dash = agent.dashboard(Split.TESTING)
    wrong = [i for i in dash["items"] if not i["correct"]]
    print(f"testing dashboard: {dash['total']} records, {len(wrong)} misclassified shown first")
    for item in dash["items"][:5]:
        verdict = "ok " if item["correct"] else "MISS"
        print(f"  [{verdict}] true={item['label_name']} predicted={item['predicted_name']}")

    agent.close()
    server.stop()
