#!/usr/bin/env python3
"""Replicated datasets in a nutshell: ops, tombstones, and convergence.

Two in-process replicas edit the same project through a toy sequencer.
Watch a delete win a race against a concurrent add, and check that both
replicas end up byte-identical.
"""

from coml.domain import ReplicatedProject, Sample, Split, canonical_digest, live_counts
from coml.replication import AddLabel, AddSample, DatasetOp, DeleteSample, apply

PROJECT = "11111111-2222-4333-8444-555555555555"
ALICE = "aaaaaaaa-0000-4000-8000-000000000001"
BOB = "bbbbbbbb-0000-4000-8000-000000000002"
LABEL = "cccccccc-0000-4000-8000-000000000003"
SAMPLE = "dddddddd-0000-4000-8000-000000000004"


def op(n, device, kind, seq):
    return DatasetOp(op_id=f"{n:08x}-0000-4000-8000-000000000000", device=device, lamport=n, kind=kind, seq=seq)


sample = Sample(id=SAMPLE, label=LABEL, split=Split.TRAINING, blob="e" * 64, created_by=ALICE, created_at=0)

# The server sequenced Bob's delete BEFORE Alice's add (they raced).
ops = [
    op(1, ALICE, AddLabel(LABEL, "apple"), seq=1),
    op(2, BOB, DeleteSample(SAMPLE), seq=2),  # delete-wins placeholder
    op(3, ALICE, AddSample(sample), seq=3),  # arrives pre-tombstoned
]

replica_a = ReplicatedProject(id=PROJECT)
replica_b = ReplicatedProject(id=PROJECT)
for o in ops:
    apply(replica_a, o)
    apply(replica_b, o)

print("live counts:", live_counts(replica_a))  # the raced sample never resurfaces
print("sample tombstoned:", replica_a.samples[SAMPLE].deleted)
print("replica A digest:", canonical_digest(replica_a))
print("replica B digest:", canonical_digest(replica_b))
assert canonical_digest(replica_a) == canonical_digest(replica_b)
print("converged: yes")
