"""The per-device headless client: one tablet's worth of state.

An Agent owns a replica of one project, the device-local model and its
classification records, the telemetry log, and the connection to the sync
server. The CLI and the web UI drive it through the local API (see
``localapi``); everything they can do funnels through the methods here, and
every user-visible mutation rides the replicated op log — there is no
side-channel state.

Locking discipline: ``self._cond`` guards replica/model/record state. Network
waits (blob transfer, op commit) never happen while it is held, so the
connection's reader thread can always deliver ops into the replica.
"""

from __future__ import annotations

import json
import threading
import time
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from .client import SyncConnection
from .domain import ReplicatedProject, Split, display_names, live_counts
from .errors import ConnectivityError, EmptyTestSet, ValidationError
from .evaluation import (
    ClassificationRecord,
    InteractiveGame,
    balance_stats,
    dashboard_order,
    evaluate_all,
    run_game,
    weighted_accuracy,
)
from .ids import DeviceId, IdSource, LabelId, SampleId, short_id
from .image import ImageBlob, parse_ppm
from .replication import Replica
from .telemetry import (
    ActivityEvent,
    ActivityLog,
    GameEnded,
    GameStarted,
    LiveClassificationStarted,
    ModelTrained,
    SampleAdded,
    SampleDeleted,
)
from .training import DEFAULT_HYPER, Hyperparams, TrainedModel, classify, predicted_label, save_model, serialize_model, train

DASHBOARD_PAGE_SIZE = 25  # grid shows 25 images at a time
LIVE_MIN_INTERVAL_S = 0.1  # rate cap: 10 evaluations/s


class BlobCache:
    """Digest-keyed canonical PPM bytes with parsed-image memoization."""

    def __init__(self):
        self._bytes: dict[str, bytes] = {}
        self._images: dict[str, ImageBlob] = {}

    def put(self, blob: ImageBlob):
        self._bytes[blob.digest] = blob.to_ppm()
        self._images[blob.digest] = blob

    def put_bytes(self, data: bytes) -> ImageBlob:
        blob = parse_ppm(data)
        self._bytes[blob.digest] = blob.to_ppm()
        self._images[blob.digest] = blob
        return blob

    def __contains__(self, digest: str) -> bool:
        return digest in self._bytes

    def raw(self, digest: str) -> bytes:
        return self._bytes[digest]

    def __getitem__(self, digest: str) -> ImageBlob:
        image = self._images.get(digest)
        if image is None:
            image = parse_ppm(self._bytes[digest])
            self._images[digest] = image
        return image


def record_to_dict(record: ClassificationRecord) -> dict:
    return {
        "sample_id": record.sample_id,
        "label": record.label,
        "model_version": record.model_version,
        "predicted": record.predicted,
        "confidence": record.confidence,
        "correct": record.correct,
        "recorded_at": record.recorded_at,
        "user_corrected_label": record.user_corrected_label,
    }


class Agent:
    def __init__(
        self,
        device_id: DeviceId | None = None,
        agent_dir: str | Path | None = None,
        id_source: IdSource | None = None,
        clock_ms: Callable[[], int] | None = None,
        clock_s: Callable[[], float] | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.ids = id_source or IdSource()
        self.device_id = device_id or self.ids.new_id()
        self.clock_ms = clock_ms or (lambda: int(time.time() * 1000))
        self.clock_s = clock_s or time.monotonic
        self._sleep = sleep

        self.agent_dir = Path(agent_dir) if agent_dir is not None else None
        log_path = None
        if self.agent_dir is not None:
            self.agent_dir.mkdir(parents=True, exist_ok=True)
            (self.agent_dir / "models").mkdir(exist_ok=True)
            log_path = self.agent_dir / "activity.ndjson"
        self.log = ActivityLog(log_path)

        self._cond = threading.Condition()
        self.replica: Replica | None = None
        self.connection: SyncConnection | None = None
        self._syncing = False
        self.server_addr: tuple[str, int] | None = None
        self.project_id: str | None = None
        self.token: str | None = None

        self.blobs = BlobCache()
        self._unuploaded: list[str] = []  # digests captured while offline

        self.current_model: TrainedModel | None = None
        self.records: list[ClassificationRecord] = []
        self._model_version = self._scan_model_versions()

        self._high_scores: dict[str, float] = self._load_high_scores()
        self._game: InteractiveGame | None = None
        self._live_on = False
        self._live_last = float("-inf")

        self._listeners: list[Callable[[dict], None]] = []

    # ------------------------------------------------------------------ state

    @property
    def connection_state(self) -> str:
        conn = self.connection
        if conn is None or conn.closed:
            return "offline"
        return "syncing" if self._syncing else "live"

    def add_listener(self, fn: Callable[[dict], None]):
        self._listeners.append(fn)

    def remove_listener(self, fn: Callable[[dict], None]):
        if fn in self._listeners:
            self._listeners.remove(fn)

    def _emit(self, event: dict):
        for fn in list(self._listeners):
            try:
                fn(event)
            except Exception:
                self.remove_listener(fn)

    def view(self) -> ReplicatedProject:
        with self._cond:
            self._require_replica()
            return self.replica.view()

    def _require_replica(self) -> Replica:
        if self.replica is None:
            raise ValidationError("agent has not joined a project")
        return self.replica

    def _event(self, kind) -> ActivityEvent:
        return ActivityEvent(event_id=self.ids.new_id(), device=self.device_id, ts=self.clock_ms(), kind=kind)

    # ------------------------------------------------------------ connection

    def create_project(self, server_addr: tuple[str, int], name: str) -> tuple[str, str]:
        """Create a project on the server and join it."""
        conn = SyncConnection(server_addr)
        try:
            project_id, token = conn.create_project(name)
        finally:
            conn.close()
        self.join(server_addr, project_id, token)
        return project_id, token

    def join(self, server_addr: tuple[str, int], project_id: str, token: str):
        """Connect, catch up from the server, and drain the offline queue."""
        with self._cond:
            if self.replica is None:
                self.replica = Replica(project_id, self.device_id, self.ids, self.clock_ms)
            elif self.replica.project.id != project_id:
                raise ValidationError("agent is bound to a different project")
            last_seq = self.replica.project.applied_seq
        if self.connection is not None:
            self.connection.close()
        self._syncing = True
        try:
            conn = SyncConnection(server_addr, on_ops=self._on_ops, on_disconnect=self._on_disconnect)
            server_seq = conn.hello(project_id, token, self.device_id, last_seq)
            self.connection = conn
            self.server_addr = server_addr
            self.project_id = project_id
            self.token = token
            self.wait_synced(server_seq)
            self._flush_offline_queue()
        finally:
            self._syncing = False
        self._emit({"type": "CONNECTION", "state": "live"})

    def disconnect(self):
        conn, self.connection = self.connection, None
        if conn is not None:
            conn.close()
        self._emit({"type": "CONNECTION", "state": "offline"})

    def reconnect(self):
        if self.server_addr is None or self.project_id is None or self.token is None:
            raise ConnectivityError("nothing to reconnect to")
        self.join(self.server_addr, self.project_id, self.token)

    def _on_ops(self, ops):
        with self._cond:
            if self.replica is None:
                return
            applied = self.replica.receive_all(ops)
            if applied:
                self._cond.notify_all()
                seq = self.replica.project.applied_seq
            else:
                return
        self._emit({"type": "PROJECT_CHANGED", "applied_seq": seq})

    def _on_disconnect(self):
        self.connection = None
        self._emit({"type": "CONNECTION", "state": "offline"})

    def wait_synced(self, seq: int | None = None, timeout: float = 30.0) -> int:
        """Block until applied_seq reaches ``seq`` (and pending is drained)."""
        deadline = time.monotonic() + timeout
        with self._cond:
            self._require_replica()
            while True:
                applied = self.replica.project.applied_seq
                target_ok = applied >= seq if seq is not None else not self.replica.pending
                if target_ok:
                    return applied
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise ConnectivityError(f"sync wait timed out at seq {applied}")
                self._cond.wait(remaining)

    def _flush_offline_queue(self):
        """Upload queued blobs, then resubmit pending ops in order."""
        conn = self.connection
        if conn is None:
            return
        while self._unuploaded:
            digest = self._unuploaded[0]
            conn.put_blob(self.project_id, self.token, self.blobs.raw(digest), digest=digest)
            self._unuploaded.pop(0)
        with self._cond:
            pending = list(self.replica.pending) if self.replica else []
        for op in pending:
            conn.submit_op(self.project_id, self.token, op, wait=True)

    def _submit(self, op, wait: bool = True):
        """Send one freshly-created local op to the server, if connected."""
        conn = self.connection
        if conn is None:
            return
        try:
            conn.submit_op(self.project_id, self.token, op, wait=wait)
        except ConnectivityError:
            pass  # stays in pending; next reconnect flushes it

    # ----------------------------------------------------------- label edits

    def add_label(self, name: str) -> LabelId:
        with self._cond:
            op = self._require_replica().submit_add_label(name)
            label_id = op.kind.label_id
        self._submit(op)
        self._emit({"type": "PROJECT_CHANGED", "applied_seq": -1})
        return label_id

    def rename_label(self, label_id: LabelId, name: str):
        with self._cond:
            op = self._require_replica().submit_rename_label(label_id, name)
        self._submit(op)
        self._emit({"type": "PROJECT_CHANGED", "applied_seq": -1})

    def delete_label(self, label_id: LabelId):
        with self._cond:
            op = self._require_replica().submit_delete_label(label_id)
        self._submit(op)
        self._emit({"type": "PROJECT_CHANGED", "applied_seq": -1})

    def resolve_label(self, name: str, create: bool = False) -> LabelId:
        """Find a live label by display name; optionally create it."""
        view = self.view()
        for label_id, display in display_names(view).items():
            if display == name.strip():
                return label_id
        for label in view.live_labels():
            if label.name.strip() == name.strip():
                return label.id
        if create:
            return self.add_label(name)
        raise ValidationError(f"no live label named {name!r}")

    # -------------------------------------------------------------- captures

    def capture(
        self,
        label_id: LabelId,
        image: ImageBlob | bytes,
        split: Split,
        tags: Iterable[str] = (),
        wait: bool = True,
    ) -> SampleId:
        """Store the image, upload it, and submit the AddSample op."""
        blob = image if isinstance(image, ImageBlob) else parse_ppm(image)
        self.blobs.put(blob)
        uploaded = False
        if self.connection is not None:
            try:
                self.connection.put_blob(self.project_id, self.token, blob.to_ppm(), digest=blob.digest)
                uploaded = True
            except ConnectivityError:
                uploaded = False
        if not uploaded:
            self._unuploaded.append(blob.digest)
        with self._cond:
            op = self._require_replica().submit_add_sample(
                label_id, blob.digest, split, set(tags), created_at=self.clock_ms()
            )
            sample = op.kind.sample
        self.log.record(self._event(SampleAdded(sample.id, label_id, split.value, blob.digest)))
        if uploaded:
            self._submit(op, wait=wait)
        self._emit({"type": "PROJECT_CHANGED", "applied_seq": -1})
        return sample.id

    def delete_sample(self, sample_id: SampleId):
        with self._cond:
            op = self._require_replica().submit_delete_sample(sample_id)
        self.log.record(self._event(SampleDeleted(sample_id)))
        self._submit(op)
        self._emit({"type": "PROJECT_CHANGED", "applied_seq": -1})

    def tag_sample(self, sample_id: SampleId, tags: Iterable[str]):
        with self._cond:
            op = self._require_replica().submit_tag_sample(sample_id, frozenset(tags))
        self._submit(op)

    def relabel_sample(self, sample_id: SampleId, new_label_id: LabelId) -> SampleId:
        """Move a (typically misclassified test) sample to its correct label.

        The op vocabulary has no in-place relabel, so this is the sequenced
        tombstone + re-add pair: same blob, same split, tags carried over
        plus a relabel marker. Correctness is recomputed on next evaluation.
        """
        view = self.view()
        sample = view.samples.get(sample_id)
        if sample is None or not view.sample_is_live(sample_id):
            raise ValidationError(f"unknown sample {sample_id}")
        if not view.label_is_live(new_label_id):
            raise ValidationError(f"unknown label {new_label_id}")
        old_label = sample.label
        with self._cond:
            replica = self._require_replica()
            delete_op = replica.submit_delete_sample(sample_id)
            add_op = replica.submit_add_sample(
                new_label_id,
                sample.blob,
                sample.split,
                set(sample.tags) | {f"relabeled:{short_id(old_label)}"},
                created_at=self.clock_ms(),
            )
            new_id = add_op.kind.sample.id
        self.log.record(self._event(SampleDeleted(sample_id)))
        self.log.record(self._event(SampleAdded(new_id, new_label_id, sample.split.value, sample.blob)))
        self._submit(delete_op)
        self._submit(add_op)
        with self._cond:
            for record in self.records:
                if record.sample_id == sample_id:
                    record.user_corrected_label = new_label_id
        self._emit({"type": "PROJECT_CHANGED", "applied_seq": -1})
        return new_id

    def ensure_blobs(self, digests: Iterable[str]):
        """Fetch any blobs we don't hold locally from the server."""
        missing = [d for d in set(digests) if d not in self.blobs]
        if not missing:
            return
        conn = self.connection
        if conn is None:
            raise ConnectivityError(f"{len(missing)} blobs missing and agent is offline")
        for digest in sorted(missing):
            self.blobs.put_bytes(conn.get_blob(self.project_id, self.token, digest))

    def blob_bytes(self, digest: str) -> bytes:
        if digest not in self.blobs:
            self.ensure_blobs([digest])
        return self.blobs.raw(digest)

    # ---------------------------------------------------------------- models

    def _scan_model_versions(self) -> int:
        if self.agent_dir is None:
            return 0
        versions = [0]
        for path in (self.agent_dir / "models").glob("model-v*.json"):
            try:
                versions.append(int(path.stem.split("-v")[1]))
            except (IndexError, ValueError):
                continue
        return max(versions)

    def retrain(self, seed: int, hyper: Hyperparams = DEFAULT_HYPER) -> TrainedModel:
        """Train on the current view, refresh every test record, log the event."""
        snapshot = self.view()
        needed = [s.blob for s in snapshot.live_samples()]
        self.ensure_blobs(needed)
        model = train(
            snapshot,
            self.blobs,
            seed,
            hyper=hyper,
            device=self.device_id,
            version=self._model_version + 1,
            trained_at=self.clock_ms(),
        )
        records = evaluate_all(snapshot, model, self.blobs, recorded_at=self.clock_ms())
        with self._cond:
            self._model_version = model.version
            self.current_model = model
            self.records = records
        per_label: dict[str, tuple[int, int]] = {}
        for record in records:
            correct, total = per_label.get(record.label, (0, 0))
            per_label[record.label] = (correct + (1 if record.correct else 0), total + 1)
        self.log.record(self._event(ModelTrained(model.version, per_label)))
        if self.agent_dir is not None:
            save_model(model, self.agent_dir / "models" / f"model-v{model.version}.json")
        self._emit({"type": "MODEL_CHANGED", "version": model.version})
        return model

    def _require_model(self) -> TrainedModel:
        if self.current_model is None:
            raise ValidationError("no trained model on this device yet")
        return self.current_model

    def test_photo(self, label_id: LabelId, image: ImageBlob | bytes, tags: Iterable[str] = ()) -> ClassificationRecord:
        """Classify a new photo and save it as test data under ``label_id``."""
        model = self._require_model()
        blob = image if isinstance(image, ImageBlob) else parse_ppm(image)
        conf = classify(model, blob)
        predicted = predicted_label(model, conf)
        sample_id = self.capture(label_id, blob, Split.TESTING, tags)
        record = ClassificationRecord(
            sample_id=sample_id,
            label=label_id,
            model_version=model.version,
            predicted=predicted,
            confidence=[float(c) for c in conf],
            correct=predicted == label_id,
            recorded_at=self.clock_ms(),
        )
        with self._cond:
            self.records.append(record)
        return record

    def classify_image(self, image: ImageBlob | bytes) -> tuple[np.ndarray, LabelId]:
        model = self._require_model()
        blob = image if isinstance(image, ImageBlob) else parse_ppm(image)
        conf = classify(model, blob)
        return conf, predicted_label(model, conf)

    # ------------------------------------------------------------------ live

    def live_start(self):
        self._require_model()
        self._live_on = True
        self._live_last = float("-inf")
        self.log.record(self._event(LiveClassificationStarted()))

    def live_frame(self, image: ImageBlob | bytes) -> dict | None:
        """Classify one live frame; frames beyond 10/s are dropped."""
        if not self._live_on:
            raise ValidationError("live classification is not running")
        now = self.clock_s()
        if now - self._live_last < LIVE_MIN_INTERVAL_S:
            return None
        self._live_last = now
        conf, top = self.classify_image(image)
        result = {
            "type": "LIVE_RESULT",
            "confidences": [float(c) for c in conf],
            "label_order": list(self._require_model().label_order),
            "top": top,
        }
        self._emit(result)
        return result

    def live_stop(self):
        self._live_on = False

    def live_stream(self, images: Iterable[ImageBlob]) -> Iterator[tuple[np.ndarray, LabelId]]:
        """Paced stream classification for headless feeds (<=10/s)."""
        self.live_start()
        try:
            for image in images:
                now = self.clock_s()
                gap = LIVE_MIN_INTERVAL_S - (now - self._live_last)
                if gap > 0:
                    self._sleep(gap)
                self._live_last = self.clock_s()
                yield self.classify_image(image)
        finally:
            self.live_stop()

    # ------------------------------------------------------------------ game

    def high_score(self) -> float:
        return self._high_scores.get(self.project_id or "", 0.0)

    def _store_high_score(self, score: float):
        key = self.project_id or ""
        if score > self._high_scores.get(key, 0.0):
            self._high_scores[key] = score
            self._save_high_scores()

    def game_start(self, seed: int) -> dict:
        model = self._require_model()
        self._game = InteractiveGame(
            model.label_order, seed, self.clock_s, high_score=self.high_score()
        )
        self.log.record(self._event(GameStarted(seed)))
        return {
            "target": self._game.next_target(),
            "round": 1,
            "time_limit_s": self._game.session.time_limit_s,
            "round_length_s": self._game.session.round_length_s,
        }

    def game_round(self, image: ImageBlob | bytes) -> dict:
        if self._game is None:
            raise ValidationError("no game in progress")
        conf, _ = self.classify_image(image)
        round_ = self._game.finish_round(conf)
        over = self._game.over()
        return {
            "round": {"target": round_.target, "final_confidence": round_.final_confidence, "score": round_.score},
            "rounds_played": len(self._game.session.rounds),
            "next_target": None if over else self._game.next_target(),
            "over": over,
            "total_so_far": sum(r.score for r in self._game.session.rounds),
        }

    def game_end(self) -> dict:
        if self._game is None:
            raise ValidationError("no game in progress")
        session = self._game.finish()
        self._game = None
        self._store_high_score(session.total_score)
        session.high_score = max(session.high_score, self.high_score())
        self.log.record(self._event(GameEnded(session.total_score)))
        doc = session.to_dict()
        self._emit({"type": "GAME_OVER", "session": doc})
        return doc

    def play_game_feed(self, images: Iterable[ImageBlob], seed: int) -> dict:
        """Headless game: the feed yields each round's end-of-round image."""
        model = self._require_model()
        self.log.record(self._event(GameStarted(seed)))
        session = run_game(
            model.label_order,
            lambda blob: classify(model, blob),
            images,
            seed,
            high_score=self.high_score(),
        )
        self._store_high_score(session.total_score)
        self.log.record(self._event(GameEnded(session.total_score)))
        doc = session.to_dict()
        self._emit({"type": "GAME_OVER", "session": doc})
        return doc

    def _load_high_scores(self) -> dict[str, float]:
        if self.agent_dir is None:
            return {}
        path = self.agent_dir / "highscores.json"
        if not path.exists():
            return {}
        return {k: float(v) for k, v in json.loads(path.read_text("utf-8")).items()}

    def _save_high_scores(self):
        if self.agent_dir is None:
            return
        (self.agent_dir / "highscores.json").write_text(json.dumps(self._high_scores, indent=2), "utf-8")

    # ------------------------------------------------------------ dashboards

    def dashboard(self, split: Split, page: int = 1) -> dict:
        """One page (25 items) of the training or testing dashboard."""
        if page < 1:
            raise ValidationError(f"page numbers start at 1, got {page}")
        view = self.view()
        names = display_names(view)
        if split is Split.TRAINING:
            samples = sorted(
                (s for s in view.live_samples() if s.split is Split.TRAINING),
                key=lambda s: (-s.created_at, s.id),
            )
            items = [
                {
                    "sample_id": s.id,
                    "label": s.label,
                    "label_name": names.get(s.label),
                    "digest": s.blob,
                    "created_by": s.created_by,
                    "created_at": s.created_at,
                    "tags": sorted(s.tags),
                }
                for s in samples
            ]
        else:
            with self._cond:
                records = list(self.records)
            live = {s.id: s for s in view.live_samples() if s.split is Split.TESTING}
            ordered = [r for r in dashboard_order(records) if r.sample_id in live]
            items = []
            for r in ordered:
                sample = live[r.sample_id]
                items.append(
                    {
                        "sample_id": r.sample_id,
                        "label": r.label,
                        "label_name": names.get(r.label),
                        "predicted": r.predicted,
                        "predicted_name": names.get(r.predicted, r.predicted),
                        "correct": r.correct,
                        "confidence": r.confidence,
                        "model_version": r.model_version,
                        "digest": sample.blob,
                        "recorded_at": r.recorded_at,
                        "user_corrected_label": r.user_corrected_label,
                        "tags": sorted(sample.tags),
                    }
                )
        start = (page - 1) * DASHBOARD_PAGE_SIZE
        return {
            "split": split.value,
            "page": page,
            "page_size": DASHBOARD_PAGE_SIZE,
            "total": len(items),
            "items": items[start : start + DASHBOARD_PAGE_SIZE],
        }

    def label_list(self) -> list[dict]:
        view = self.view()
        names = display_names(view)
        counts = live_counts(view)
        return [
            {
                "label_id": label.id,
                "name": names[label.id],
                "raw_name": label.name,
                "training_count": counts[label.id][0],
                "testing_count": counts[label.id][1],
            }
            for label in sorted(view.live_labels(), key=lambda l: (names[l.id], l.id))
        ]

    def stats(self) -> dict:
        view = self.view()
        names = display_names(view)
        counts = live_counts(view)
        balance = balance_stats(view)
        with self._cond:
            records = list(self.records)
        accuracy = None
        if records:
            test_counts: dict[str, int] = {}
            for record in records:
                test_counts[record.label] = test_counts.get(record.label, 0) + 1
            try:
                accuracy = weighted_accuracy(records, test_counts)
            except EmptyTestSet:
                accuracy = None
        retrains = sum(1 for e in self.log.events if isinstance(e.kind, ModelTrained))
        return {
            "project_id": view.id,
            "device_id": self.device_id,
            "connection": self.connection_state,
            "applied_seq": view.applied_seq,
            "pending_ops": len(self.replica.pending) if self.replica else 0,
            "labels": {
                label_id: {
                    "name": names[label_id],
                    "training_count": counts[label_id][0],
                    "testing_count": counts[label_id][1],
                    "train_pct": balance[label_id].train_pct,
                    "test_pct": balance[label_id].test_pct,
                }
                for label_id in counts
            },
            "training_total": sum(c[0] for c in counts.values()),
            "testing_total": sum(c[1] for c in counts.values()),
            "weighted_accuracy": accuracy,
            "model_version": self.current_model.version if self.current_model else None,
            "retrain_count": retrains,
            "high_score": self.high_score(),
        }

    def export_model(self) -> str:
        return serialize_model(self._require_model())

    def close(self):
        self.disconnect()
        self.log.close()
