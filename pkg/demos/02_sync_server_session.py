#!/usr/bin/env python3
"""A real two-device session: sync server, invites, synchronized dashboards.

Starts a server on an ephemeral port, joins two agents to one project, and
shows both devices seeing each other's captures without any manual refresh.
"""

import random
import tempfile

from coml.agent import Agent
from coml.domain import Split, canonical_digest
from coml.image import ImageBlob
from coml.server import SyncServer


def swatch(rng, base, size=16):
    pixels = bytes(
        max(0, min(255, base[ch] + rng.randrange(-25, 26))) for _ in range(size * size) for ch in range(3)
    )
    return ImageBlob(size, size, pixels)


rng = random.Random(7)
with tempfile.TemporaryDirectory() as data_dir:
    server = SyncServer(data_dir).start()
    print(f"server on {server.address[0]}:{server.address[1]}")

    alice = Agent()
    project_id, token = alice.create_project(server.address, "fruit-salad")
    print(f"project {project_id}\ninvite token {token}")

    bob = Agent()
    bob.join(server.address, project_id, token)

    apple = alice.add_label("apple")
    orange = bob.add_label("orange")
    alice.wait_synced(2)

    for _ in range(5):
        alice.capture(apple, swatch(rng, (200, 40, 40)), Split.TRAINING, tags=["context:hand"])
    for _ in range(3):
        bob.capture(orange, swatch(rng, (240, 140, 20)), Split.TRAINING)

    alice.wait_synced(10)
    bob.wait_synced(10)

    for name, agent in (("alice", alice), ("bob", bob)):
        dash = agent.dashboard(Split.TRAINING)
        print(f"{name} sees {dash['total']} training images across", len(agent.label_list()), "labels")
    print("digests equal:", canonical_digest(alice.replica.project) == canonical_digest(bob.replica.project))

    alice.close()
    bob.close()
    server.stop()
