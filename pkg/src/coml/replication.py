"""Operation-based replication state machine.

Every mutation of the shared dataset is a ``DatasetOp``. A single sequencer
(the sync server) assigns each op a dense total order ``seq``; every replica
applies the sequenced stream in order and therefore converges. Races are
settled by fixed rules rather than rejection, so replicas can never diverge
on accept/reject:

- delete-wins: a DeleteSample sequenced before its AddSample leaves a
  tombstone placeholder; the later add materializes the sample's metadata
  but it stays dead.
- cascade-wins: DeleteLabel tombstones the label and all its live samples,
  and any later AddSample targeting a tombstoned label is applied
  pre-tombstoned.
- last-writer-wins renames: RenameLabel applies iff its (lamport, device)
  stamp lexicographically exceeds the label's current name_stamp.

Local edits are applied optimistically: they sit in ``pending`` with seq=0
and the effective (``view``) state is confirmed-state-plus-pending, so the
optimistic view is superseded byte-identically once the server echoes the
sequenced op back.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Callable, Union

from .domain import MAX_LABEL_NAME, Label, ReplicatedProject, Sample, Split
from .errors import GapError, MalformedOp, SeqTooHigh, ValidationError
from .ids import DeviceId, IdSource, LabelId, OpId, SampleId, is_valid_id

_DIGEST_LEN = 64


@dataclass(frozen=True)
class AddLabel:
    label_id: LabelId
    name: str


@dataclass(frozen=True)
class RenameLabel:
    label_id: LabelId
    name: str
    name_stamp: tuple[int, DeviceId]


@dataclass(frozen=True)
class DeleteLabel:
    label_id: LabelId


@dataclass(frozen=True)
class AddSample:
    sample: Sample  # blob travels by digest; bytes go out-of-band


@dataclass(frozen=True)
class DeleteSample:
    sample_id: SampleId


@dataclass(frozen=True)
class TagSample:
    sample_id: SampleId
    tags: frozenset[str]


OpKind = Union[AddLabel, RenameLabel, DeleteLabel, AddSample, DeleteSample, TagSample]


@dataclass
class DatasetOp:
    op_id: OpId
    device: DeviceId
    lamport: int
    kind: OpKind
    seq: int = 0  # assigned by the server; 0 until sequenced


# --- wire codec -------------------------------------------------------------
#
# Ops travel as JSON objects (length-prefixed on the socket, one-per-line in
# the WAL). Field names match the dataclasses exactly.


def op_to_dict(op: DatasetOp) -> dict:
    kind = op.kind
    if isinstance(kind, AddLabel):
        payload = {"type": "AddLabel", "label_id": kind.label_id, "name": kind.name}
    elif isinstance(kind, RenameLabel):
        payload = {
            "type": "RenameLabel",
            "label_id": kind.label_id,
            "name": kind.name,
            "name_stamp": [kind.name_stamp[0], kind.name_stamp[1]],
        }
    elif isinstance(kind, DeleteLabel):
        payload = {"type": "DeleteLabel", "label_id": kind.label_id}
    elif isinstance(kind, AddSample):
        s = kind.sample
        payload = {
            "type": "AddSample",
            "sample": {
                "id": s.id,
                "label": s.label,
                "split": s.split.value,
                "blob": s.blob,
                "created_by": s.created_by,
                "created_at": s.created_at,
                "tags": sorted(s.tags),
            },
        }
    elif isinstance(kind, DeleteSample):
        payload = {"type": "DeleteSample", "sample_id": kind.sample_id}
    elif isinstance(kind, TagSample):
        payload = {"type": "TagSample", "sample_id": kind.sample_id, "tags": sorted(kind.tags)}
    else:
        raise MalformedOp(f"unknown op kind {type(kind).__name__}")
    return {
        "op_id": op.op_id,
        "device": op.device,
        "lamport": op.lamport,
        "kind": payload,
        "seq": op.seq,
    }


def op_to_json(op: DatasetOp) -> bytes:
    return json.dumps(op_to_dict(op), separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def _require(cond: bool, what: str):
    if not cond:
        raise MalformedOp(what)


def _check_id(value: object, what: str) -> str:
    _require(is_valid_id(value), f"{what} is not a canonical 128-bit id: {value!r}")
    return value  # type: ignore[return-value]


def _check_name(value: object) -> str:
    _require(isinstance(value, str), "label name must be a string")
    _require(1 <= len(value) <= MAX_LABEL_NAME, f"label name length {len(value)} outside 1..{MAX_LABEL_NAME}")
    return value  # type: ignore[return-value]


def _check_tags(value: object) -> frozenset[str]:
    _require(isinstance(value, list) and all(isinstance(t, str) for t in value), "tags must be a list of strings")
    return frozenset(value)  # type: ignore[arg-type]


def _check_uint(value: object, what: str) -> int:
    _require(isinstance(value, int) and not isinstance(value, bool) and value >= 0, f"{what} must be a non-negative integer")
    return value  # type: ignore[return-value]


def _check_digest(value: object) -> str:
    _require(
        isinstance(value, str) and len(value) == _DIGEST_LEN and all(c in "0123456789abcdef" for c in value),
        f"blob digest must be {_DIGEST_LEN} lowercase hex chars",
    )
    return value  # type: ignore[return-value]


def op_from_dict(doc: object) -> DatasetOp:
    """Strictly parse one op; raises MalformedOp on any schema violation."""
    _require(isinstance(doc, dict), "op must be a JSON object")
    assert isinstance(doc, dict)
    kind_doc = doc.get("kind")
    _require(isinstance(kind_doc, dict), "op.kind must be an object")
    assert isinstance(kind_doc, dict)
    kind_type = kind_doc.get("type")
    if kind_type == "AddLabel":
        kind: OpKind = AddLabel(_check_id(kind_doc.get("label_id"), "label_id"), _check_name(kind_doc.get("name")))
    elif kind_type == "RenameLabel":
        stamp = kind_doc.get("name_stamp")
        _require(isinstance(stamp, list) and len(stamp) == 2, "name_stamp must be [lamport, device]")
        assert isinstance(stamp, list)
        kind = RenameLabel(
            _check_id(kind_doc.get("label_id"), "label_id"),
            _check_name(kind_doc.get("name")),
            (_check_uint(stamp[0], "name_stamp.lamport"), _check_id(stamp[1], "name_stamp.device")),
        )
    elif kind_type == "DeleteLabel":
        kind = DeleteLabel(_check_id(kind_doc.get("label_id"), "label_id"))
    elif kind_type == "AddSample":
        s = kind_doc.get("sample")
        _require(isinstance(s, dict), "sample must be an object")
        assert isinstance(s, dict)
        split_raw = s.get("split")
        _require(split_raw in (Split.TRAINING.value, Split.TESTING.value), f"unknown split {split_raw!r}")
        kind = AddSample(
            Sample(
                id=_check_id(s.get("id"), "sample.id"),
                label=_check_id(s.get("label"), "sample.label"),
                split=Split(split_raw),
                blob=_check_digest(s.get("blob")),
                created_by=_check_id(s.get("created_by"), "sample.created_by"),
                created_at=_check_uint(s.get("created_at"), "sample.created_at"),
                tags=set(_check_tags(s.get("tags"))),
            )
        )
    elif kind_type == "DeleteSample":
        kind = DeleteSample(_check_id(kind_doc.get("sample_id"), "sample_id"))
    elif kind_type == "TagSample":
        kind = TagSample(_check_id(kind_doc.get("sample_id"), "sample_id"), _check_tags(kind_doc.get("tags")))
    else:
        raise MalformedOp(f"unknown op kind {kind_type!r}")
    return DatasetOp(
        op_id=_check_id(doc.get("op_id"), "op_id"),
        device=_check_id(doc.get("device"), "device"),
        lamport=_check_uint(doc.get("lamport"), "lamport"),
        kind=kind,
        seq=_check_uint(doc.get("seq"), "seq"),
    )


def op_from_json(data: bytes) -> DatasetOp:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedOp(f"op is not valid JSON: {exc}") from exc
    return op_from_dict(doc)


# --- state transitions ------------------------------------------------------


def apply_semantics(project: ReplicatedProject, op: DatasetOp):
    """The seq-agnostic transition; also used for optimistic pending ops."""
    kind = op.kind
    if isinstance(kind, AddLabel):
        if kind.label_id in project.label_tombstones:
            # materialize the eagerly-deleted label; it stays dead
            project.label_tombstones.discard(kind.label_id)
            project.labels[kind.label_id] = Label(kind.label_id, kind.name, (op.lamport, op.device), deleted=True)
        elif kind.label_id not in project.labels:
            project.labels[kind.label_id] = Label(kind.label_id, kind.name, (op.lamport, op.device))
    elif isinstance(kind, RenameLabel):
        label = project.labels.get(kind.label_id)
        if label is not None and kind.name_stamp > label.name_stamp:
            label.name = kind.name
            label.name_stamp = kind.name_stamp
    elif isinstance(kind, DeleteLabel):
        label = project.labels.get(kind.label_id)
        if label is None:
            project.label_tombstones.add(kind.label_id)
        else:
            label.deleted = True
            for sample in project.samples.values():
                if sample.label == kind.label_id:
                    sample.deleted = True
    elif isinstance(kind, AddSample):
        incoming = kind.sample
        if incoming.id in project.sample_tombstones:
            project.sample_tombstones.discard(incoming.id)
            project.samples[incoming.id] = replace(incoming, tags=set(incoming.tags), seq=op.seq, deleted=True)
        elif incoming.id not in project.samples:
            dead_label = not project.label_is_live(incoming.label)
            project.samples[incoming.id] = replace(
                incoming, tags=set(incoming.tags), seq=op.seq, deleted=dead_label
            )
    elif isinstance(kind, DeleteSample):
        sample = project.samples.get(kind.sample_id)
        if sample is None:
            project.sample_tombstones.add(kind.sample_id)
        else:
            sample.deleted = True
    elif isinstance(kind, TagSample):
        sample = project.samples.get(kind.sample_id)
        if sample is not None:
            sample.tags |= kind.tags
    else:
        raise MalformedOp(f"unknown op kind {type(kind).__name__}")


def apply(project: ReplicatedProject, op: DatasetOp) -> ReplicatedProject:
    """Apply one sequenced op; ops must arrive densely in seq order."""
    if op.seq != project.applied_seq + 1:
        raise GapError(f"op seq {op.seq}, expected {project.applied_seq + 1}")
    apply_semantics(project, op)
    project.applied_seq = op.seq
    return project


def delta_since(op_log: list[DatasetOp], seq: int, applied_seq: int | None = None) -> list[DatasetOp]:
    """Sequenced ops with seq in (seq, applied_seq], in order."""
    high = len(op_log) if applied_seq is None else applied_seq
    if seq > high:
        raise SeqTooHigh(f"requested delta since {seq} but log ends at {high}")
    return op_log[seq:high]


# --- the per-device replica -------------------------------------------------


class Replica:
    """Single-writer state machine for one device's copy of a project.

    All mutations funnel through ``submit_*`` (local intents) and
    ``receive`` (sequenced ops from the server); reads work on snapshots.
    """

    def __init__(
        self,
        project_id: str,
        device_id: DeviceId,
        id_source: IdSource | None = None,
        clock_ms: Callable[[], int] | None = None,
    ):
        self.device_id = device_id
        self.project = ReplicatedProject(id=project_id)
        self.pending: list[DatasetOp] = []
        self.op_log: list[DatasetOp] = []
        self.lamport = 0
        self.ids = id_source or IdSource()
        self.clock_ms = clock_ms

    # -- reads

    def view(self) -> ReplicatedProject:
        """Optimistic state: confirmed ops plus pending local ops."""
        snap = self.project.copy()
        for op in self.pending:
            apply_semantics(snap, op)
        return snap

    def delta_since(self, seq: int) -> list[DatasetOp]:
        return delta_since(self.op_log, seq, self.project.applied_seq)

    # -- sequenced input

    def receive(self, op: DatasetOp) -> bool:
        """Apply one server-sequenced op; returns False if already applied."""
        if op.seq != 0 and op.seq <= self.project.applied_seq:
            return False  # idempotent catch-up: duplicate delivery
        self.lamport = max(self.lamport, op.lamport) + 1
        apply(self.project, op)
        self.op_log.append(op)
        self.pending = [p for p in self.pending if p.op_id != op.op_id]
        return True

    def receive_all(self, ops: list[DatasetOp]) -> int:
        return sum(1 for op in ops if self.receive(op))

    # -- effective (confirmed + pending) lookups for intent validation;
    #    cheap overlays instead of view() so submits stay O(labels + pending)
    #    even on sample-heavy projects.

    def _effective_labels(self) -> dict[LabelId, tuple[str, bool]]:
        """label_id -> (name, live) after replaying pending label ops."""
        states = {l.id: (l.name, not l.deleted) for l in self.project.labels.values()}
        dead = set(self.project.label_tombstones)
        for op in self.pending:
            kind = op.kind
            if isinstance(kind, AddLabel):
                if kind.label_id not in states and kind.label_id not in dead:
                    states[kind.label_id] = (kind.name, True)
            elif isinstance(kind, RenameLabel) and kind.label_id in states:
                name, live = states[kind.label_id]
                states[kind.label_id] = (kind.name, live)
            elif isinstance(kind, DeleteLabel):
                if kind.label_id in states:
                    states[kind.label_id] = (states[kind.label_id][0], False)
                else:
                    dead.add(kind.label_id)
        return states

    def _label_is_live(self, label_id: LabelId) -> bool:
        state = self._effective_labels().get(label_id)
        return state is not None and state[1]

    def _sample_known(self, sample_id: SampleId) -> bool:
        if sample_id in self.project.samples:
            return True
        return any(isinstance(op.kind, AddSample) and op.kind.sample.id == sample_id for op in self.pending)

    # -- local intents; each validates against the effective state,
    #    appends to pending with seq=0, and returns the op for submission.

    def _submit(self, kind: OpKind) -> DatasetOp:
        self.lamport += 1
        op = DatasetOp(op_id=self.ids.new_id(), device=self.device_id, lamport=self.lamport, kind=kind, seq=0)
        self.pending.append(op)
        return op

    def submit_add_label(self, name: str, label_id: LabelId | None = None) -> DatasetOp:
        self._validate_name(name)
        return self._submit(AddLabel(label_id or self.ids.new_id(), name))

    def submit_rename_label(self, label_id: LabelId, name: str) -> DatasetOp:
        if not self._label_is_live(label_id):
            raise ValidationError(f"unknown label {label_id}")
        self._validate_name(name, allow_id=label_id)
        return self._submit(RenameLabel(label_id, name, (self.lamport + 1, self.device_id)))

    def submit_delete_label(self, label_id: LabelId) -> DatasetOp:
        if not self._label_is_live(label_id):
            raise ValidationError(f"unknown label {label_id}")
        return self._submit(DeleteLabel(label_id))

    def submit_add_sample(
        self,
        label_id: LabelId,
        blob_digest: str,
        split: Split,
        tags: set[str] | frozenset[str] = frozenset(),
        created_at: int | None = None,
        sample_id: SampleId | None = None,
    ) -> DatasetOp:
        if not self._label_is_live(label_id):
            raise ValidationError(f"unknown label {label_id}")
        _check_digest(blob_digest)
        if created_at is None:
            created_at = self.clock_ms() if self.clock_ms else 0
        sample = Sample(
            id=sample_id or self.ids.new_id(),
            label=label_id,
            split=split,
            blob=blob_digest,
            created_by=self.device_id,
            created_at=created_at,
            tags=set(tags),
        )
        return self._submit(AddSample(sample))

    def submit_delete_sample(self, sample_id: SampleId) -> DatasetOp:
        if not self._sample_known(sample_id):
            raise ValidationError(f"unknown sample {sample_id}")
        return self._submit(DeleteSample(sample_id))

    def submit_tag_sample(self, sample_id: SampleId, tags: set[str] | frozenset[str]) -> DatasetOp:
        if not self._sample_known(sample_id):
            raise ValidationError(f"unknown sample {sample_id}")
        return self._submit(TagSample(sample_id, frozenset(tags)))

    def _validate_name(self, name: str, allow_id: LabelId | None = None):
        trimmed = name.strip()
        if not trimmed:
            raise ValidationError("label name is empty")
        if len(name) > MAX_LABEL_NAME:
            raise ValidationError(f"label name exceeds {MAX_LABEL_NAME} chars")
        for label_id, (label_name, live) in self._effective_labels().items():
            if live and label_id != allow_id and label_name.strip() == trimmed:
                raise ValidationError(f"label name {trimmed!r} already in use")
