"""Shared fixtures: synthetic images, project builders, and an in-memory sequencer."""

from __future__ import annotations

import random

import pytest

from coml.domain import ReplicatedProject, Sample, Split
from coml.errors import MissingBlob
from coml.ids import IdSource
from coml.image import ImageBlob
from coml.replication import AddSample, DatasetOp, Replica, delta_since


def make_image(rng: random.Random, width: int = 16, height: int = 16, base: tuple[int, int, int] | None = None) -> ImageBlob:
    """Random RGB image, optionally jittered around a base color."""
    if base is None:
        pixels = bytes(rng.randrange(256) for _ in range(3 * width * height))
    else:
        pixels = bytes(
            max(0, min(255, base[ch] + rng.randrange(-25, 26)))
            for _ in range(width * height)
            for ch in range(3)
        )
    return ImageBlob(width, height, pixels)


class SimSequencer:
    """In-memory stand-in for the sync server's per-project sequencer."""

    def __init__(self):
        self.op_log: list[DatasetOp] = []
        self._by_op_id: dict[str, int] = {}
        self.blobs: set[str] = set()

    def put_blob(self, digest: str):
        self.blobs.add(digest)

    def sequence(self, op: DatasetOp) -> DatasetOp:
        if op.op_id in self._by_op_id:
            return self.op_log[self._by_op_id[op.op_id] - 1]
        if isinstance(op.kind, AddSample) and op.kind.sample.blob not in self.blobs:
            raise MissingBlob(op.kind.sample.blob)
        seq = len(self.op_log) + 1
        sequenced = DatasetOp(op.op_id, op.device, op.lamport, op.kind, seq)
        self.op_log.append(sequenced)
        self._by_op_id[op.op_id] = seq
        return sequenced

    def delta_since(self, seq: int) -> list[DatasetOp]:
        return delta_since(self.op_log, seq)


class SimClient:
    """Replica plus connectivity simulation against a SimSequencer."""

    def __init__(self, project_id: str, sequencer: SimSequencer, seed: int, name: str = "dev"):
        self.ids = IdSource(seed)
        self.replica = Replica(project_id, self.ids.new_id(), self.ids, clock_ms=lambda: 0)
        self.sequencer = sequencer
        self.online = True

    def sync(self):
        """Push pending ops, then pull and apply everything new."""
        if not self.online:
            return
        for op in list(self.replica.pending):
            self.sequencer.sequence(op)
        self.replica.receive_all(self.sequencer.delta_since(self.replica.project.applied_seq))

    def pull(self):
        if self.online:
            self.replica.receive_all(self.sequencer.delta_since(self.replica.project.applied_seq))


def build_project(spec: dict[str, tuple[int, int]], project_id: str = "11111111-2222-4333-8444-555555555555") -> ReplicatedProject:
    """Directly assemble a converged project: label name -> (train, test) counts."""
    ids = IdSource(20_240_001)
    project = ReplicatedProject(id=project_id)
    from coml.domain import Label

    for name, (train_n, test_n) in spec.items():
        label_id = ids.new_id()
        project.labels[label_id] = Label(label_id, name, (1, "00000000-0000-4000-8000-000000000000"))
        for i in range(train_n + test_n):
            sample_id = ids.new_id()
            project.samples[sample_id] = Sample(
                id=sample_id,
                label=label_id,
                split=Split.TRAINING if i < train_n else Split.TESTING,
                blob="0" * 64,
                created_by="00000000-0000-4000-8000-000000000000",
                created_at=i,
                seq=len(project.samples) + 1,
            )
    project.applied_seq = len(project.samples)
    return project


@pytest.fixture
def rng() -> random.Random:
    return random.Random(0xC0)
