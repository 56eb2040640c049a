#!/usr/bin/env python3
"""The evaluation game: 90 seconds, 5-second rounds, 10 points per unit of
confidence in the round's target label.

Headless mode: the feed supplies the image observed at each round's end, so
the whole 90-second session replays in milliseconds.
"""

import random
import tempfile

from coml.agent import Agent
from coml.domain import Split
from coml.image import ImageBlob
from coml.server import SyncServer

COLORS = {"apple": (210, 40, 40), "mango": (250, 190, 60)}


def swatch(rng, base, size=16):
    pixels = bytes(
        max(0, min(255, base[ch] + rng.randrange(-20, 21))) for _ in range(size * size) for ch in range(3)
    )
    return ImageBlob(size, size, pixels)


rng = random.Random(12)
with tempfile.TemporaryDirectory() as data_dir:
    server = SyncServer(data_dir).start()
    agent = Agent()
    agent.create_project(server.address, "game-day")
    for name, color in COLORS.items():
        label = agent.add_label(name)
        for _ in range(15):
            agent.capture(label, swatch(rng, color), Split.TRAINING)
    agent.wait_synced()
    agent.retrain(seed=5)

    # a player who always shows an apple, whatever the target asks for
    feed = [swatch(rng, COLORS["apple"]) for _ in range(18)]
    session = agent.play_game_feed(feed, seed=99)

    names = {l["label_id"]: l["name"] for l in agent.label_list()}
    print(f"{len(session['rounds'])} rounds (max 18 under 90s/5s):")
    for i, r in enumerate(session["rounds"], 1):
        print(f"  round {i:2d}: target={names[r['target']]:<6} confidence={r['final_confidence']:.2f} -> {r['score']:.1f} pts")
    print(f"total {session['total_score']:.1f}, high score {session['high_score']:.1f}")

    # a second session with a cooperative player beats the high score
    cycle = [swatch(rng, COLORS["apple"]), swatch(rng, COLORS["mango"])]
    start = agent.game_start(seed=100)
    target = start["target"]
    while True:
        image = cycle[0] if names[target] == "apple" else cycle[1]
        result = agent.game_round(image)
        if result["over"]:
            break
        target = result["next_target"]
    final = agent.game_end()
    print(f"cooperative run: {final['total_score']:.1f} (high score now {final['high_score']:.1f})")

    agent.close()
    server.stop()
