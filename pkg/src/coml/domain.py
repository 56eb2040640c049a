"""Core replicated-dataset types and their convergence oracle.

A project's shared state is a map of labels and a map of samples plus
tombstone sets for deletions that arrived before the matching add. Deletion
is permanent: a tombstoned label or sample never reappears as live.

``canonical_serialize`` is the convergence oracle: a deterministic byte
encoding of (labels, samples, tombstones, applied_seq) that excludes pending
local ops, so two replicas that applied the same sequenced op stream are
byte-identical and hash-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum

from .ids import DeviceId, LabelId, ProjectId, SampleId, short_id

MAX_LABEL_NAME = 64

FORMAT_TAG = "coml-project-v1"


class Split(str, Enum):
    TRAINING = "training"
    TESTING = "testing"


# (lamport, device) pairs order renames: lexicographic, device id breaks ties.
NameStamp = tuple[int, DeviceId]


@dataclass
class Label:
    id: LabelId
    name: str
    name_stamp: NameStamp
    deleted: bool = False


@dataclass
class Sample:
    id: SampleId
    label: LabelId
    split: Split
    blob: str  # content digest; bytes live in the blob store
    created_by: DeviceId
    created_at: int  # wall-clock ms
    seq: int = 0  # server sequence of the AddSample op, 0 until sequenced
    tags: set[str] = field(default_factory=set)
    deleted: bool = False


@dataclass
class ReplicatedProject:
    id: ProjectId
    labels: dict[LabelId, Label] = field(default_factory=dict)
    samples: dict[SampleId, Sample] = field(default_factory=dict)
    # Ids deleted before their add was sequenced (delete-wins placeholders).
    label_tombstones: set[LabelId] = field(default_factory=set)
    sample_tombstones: set[SampleId] = field(default_factory=set)
    applied_seq: int = 0

    def label_is_live(self, label_id: LabelId) -> bool:
        label = self.labels.get(label_id)
        return label is not None and not label.deleted

    def sample_is_live(self, sample_id: SampleId) -> bool:
        sample = self.samples.get(sample_id)
        return sample is not None and not sample.deleted and self.label_is_live(sample.label)

    def live_labels(self) -> list[Label]:
        return [l for l in self.labels.values() if not l.deleted]

    def live_samples(self) -> list[Sample]:
        return [s for s in self.samples.values() if self.sample_is_live(s.id)]

    def copy(self) -> "ReplicatedProject":
        return ReplicatedProject(
            id=self.id,
            labels={k: replace(v) for k, v in self.labels.items()},
            samples={k: replace(v, tags=set(v.tags)) for k, v in self.samples.items()},
            label_tombstones=set(self.label_tombstones),
            sample_tombstones=set(self.sample_tombstones),
            applied_seq=self.applied_seq,
        )


def canonical_serialize(project: ReplicatedProject) -> bytes:
    """Deterministic encoding of the converged state.

    Labels sorted by LabelId, samples by SampleId, tags sorted, fixed field
    order via sorted JSON keys. Pending ops and any local-only data are
    excluded by construction. A sample's assigned server seq is sequencing
    bookkeeping, not dataset content, so it is excluded too: a delete that
    raced ahead of its add must converge to the same bytes either way.
    """
    doc = {
        "format": FORMAT_TAG,
        "project_id": project.id,
        "applied_seq": project.applied_seq,
        "labels": [
            {
                "id": l.id,
                "name": l.name,
                "name_stamp": [l.name_stamp[0], l.name_stamp[1]],
                "deleted": l.deleted,
            }
            for _, l in sorted(project.labels.items())
        ],
        "samples": [
            {
                "id": s.id,
                "label": s.label,
                "split": s.split.value,
                "blob": s.blob,
                "created_by": s.created_by,
                "created_at": s.created_at,
                "tags": sorted(s.tags),
                "deleted": s.deleted,
            }
            for _, s in sorted(project.samples.items())
        ],
        "label_tombstones": sorted(project.label_tombstones),
        "sample_tombstones": sorted(project.sample_tombstones),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def canonical_digest(project: ReplicatedProject) -> str:
    return hashlib.sha256(canonical_serialize(project)).hexdigest()


def live_counts(project: ReplicatedProject) -> dict[LabelId, tuple[int, int]]:
    """Per-label (training_count, testing_count), tombstones excluded."""
    counts = {l.id: [0, 0] for l in project.live_labels()}
    for sample in project.live_samples():
        counts[sample.label][0 if sample.split is Split.TRAINING else 1] += 1
    return {label_id: (t, e) for label_id, (t, e) in counts.items()}


def display_names(project: ReplicatedProject) -> dict[LabelId, str]:
    """Names as shown to users.

    Raced duplicate names are never rejected at apply time (replicas must not
    diverge on accept/reject), so collisions between live labels are resolved
    here: within each trimmed-name group the earliest name_stamp keeps the
    bare name and every later one gets a "#<short-id>" suffix.
    """
    groups: dict[str, list[Label]] = {}
    for label in project.live_labels():
        groups.setdefault(label.name.strip(), []).append(label)
    names: dict[LabelId, str] = {}
    for trimmed, members in groups.items():
        members.sort(key=lambda l: (l.name_stamp[0], l.name_stamp[1], l.id))
        names[members[0].id] = trimmed
        for later in members[1:]:
            names[later.id] = f"{trimmed}#{short_id(later.id)}"
    return names
