"""Sequencer, persistence, blob store, and invite management.

One server hosts many projects. Each project is a directory under the data
dir holding ``meta.json`` (id, invite token), ``ops.log`` (the write-ahead
op log: the same 4-byte-length + JSON frames as the wire), and ``blobs/``
(content-addressed canonical PPM files).

Sequencing per project is serialized through one lock and is linearizable:
an op is assigned the next dense seq, appended to the log, fsync'd, and only
then acknowledged and broadcast, so every op that was ever acked survives a
crash. Broadcast and catch-up snapshots happen under the same lock, which
yields exactly-once in-order delivery to every connected replica.
"""

from __future__ import annotations

import hmac
import json
import os
import socket
import threading
import time
from pathlib import Path

from . import wire
from .errors import (
    AuthFailure,
    CoMLError,
    MalformedImage,
    MalformedOp,
    MissingBlob,
    UnknownDigest,
    UnknownProject,
)
from .ids import IdSource, is_valid_id, random_token
from .image import parse_ppm
from .replication import AddSample, DatasetOp, delta_since, op_from_dict, op_from_json, op_to_dict, op_to_json
from .wire import FrameStream

DEFAULT_MAX_BLOB_BYTES = 50_331_648  # 3 * 4096 * 4096: one maximal RGB8 raster
DATA_DIR_ENV = "COML_DATA_DIR"


class ProjectStore:
    """Durable per-project state: op log, blob store, invite token."""

    def __init__(self, root: Path, project_id: str, invite_token: str, name: str, created_at: int, max_blob_bytes: int):
        self.root = root
        self.project_id = project_id
        self.invite_token = invite_token
        self.name = name
        self.created_at = created_at
        self.max_blob_bytes = max_blob_bytes
        self.op_log: list[DatasetOp] = []
        self._seq_by_op_id: dict[str, int] = {}
        self._log_file = None
        self.lock = threading.Lock()
        self.subscribers: dict[FrameStream, str] = {}  # stream -> device_id

    # -- construction

    @classmethod
    def create(cls, projects_dir: Path, name: str, max_blob_bytes: int, id_source: IdSource | None = None) -> "ProjectStore":
        ids = id_source or IdSource()
        project_id = ids.new_id()
        token = ids.new_id() if id_source is not None else random_token()
        root = projects_dir / project_id
        (root / "blobs").mkdir(parents=True)
        store = cls(root, project_id, token, name, int(time.time() * 1000), max_blob_bytes)
        meta = {
            "project_id": project_id,
            "invite_token": token,
            "name": name,
            "created_at": store.created_at,
        }
        _atomic_write(root / "meta.json", json.dumps(meta, indent=2).encode("utf-8"))
        store._open_log()
        return store

    @classmethod
    def load(cls, root: Path, max_blob_bytes: int) -> "ProjectStore":
        meta = json.loads((root / "meta.json").read_text("utf-8"))
        store = cls(root, meta["project_id"], meta["invite_token"], meta.get("name", ""), meta.get("created_at", 0), max_blob_bytes)
        store._replay_log()
        store._open_log()
        return store

    def _log_path(self) -> Path:
        return self.root / "ops.log"

    def _replay_log(self):
        """Rebuild the in-memory log; a torn tail frame is discarded."""
        path = self._log_path()
        if not path.exists():
            return
        data = path.read_bytes()
        pos = 0
        good_end = 0
        while pos + wire.HEADER.size <= len(data):
            (length,) = wire.HEADER.unpack(data[pos : pos + wire.HEADER.size])
            end = pos + wire.HEADER.size + length
            if end > len(data):
                break  # torn write from a crash; drop the tail
            op = op_from_json(data[pos + wire.HEADER.size : end])
            if op.seq != len(self.op_log) + 1:
                raise MalformedOp(f"log corruption: seq {op.seq} at position {len(self.op_log) + 1}")
            self.op_log.append(op)
            self._seq_by_op_id[op.op_id] = op.seq
            pos = end
            good_end = end
        if good_end != len(data):
            with path.open("r+b") as f:
                f.truncate(good_end)

    def _open_log(self):
        self._log_file = open(self._log_path(), "ab")

    # -- sequencing

    def applied_seq(self) -> int:
        return len(self.op_log)

    def sequence(self, op: DatasetOp) -> tuple[DatasetOp, bool]:
        """Assign the next seq and persist; caller must hold ``lock``.

        Returns (sequenced op, was_duplicate). A resubmitted op_id gets its
        original sequenced op back (client-retry idempotency).
        """
        existing = self._seq_by_op_id.get(op.op_id)
        if existing is not None:
            return self.op_log[existing - 1], True
        if isinstance(op.kind, AddSample) and not self.has_blob(op.kind.sample.blob):
            raise MissingBlob(f"blob {op.kind.sample.blob} not uploaded")
        seq = len(self.op_log) + 1
        sequenced = DatasetOp(op.op_id, op.device, op.lamport, op.kind, seq)
        frame = op_to_json(sequenced)
        self._log_file.write(wire.HEADER.pack(len(frame)) + frame)
        self._log_file.flush()
        os.fsync(self._log_file.fileno())  # ack implies durable
        self.op_log.append(sequenced)
        self._seq_by_op_id[op.op_id] = seq
        return sequenced, False

    def ops_since(self, seq: int) -> list[DatasetOp]:
        return delta_since(self.op_log, seq)

    # -- blobs (content-addressed canonical PPM)

    def _blob_path(self, digest: str) -> Path:
        return self.root / "blobs" / digest

    def has_blob(self, digest: str) -> bool:
        return self._blob_path(digest).exists()

    def put_blob(self, data: bytes) -> str:
        blob = parse_ppm(data)
        if len(blob.pixels) > self.max_blob_bytes:
            raise MalformedImage(f"pixel payload {len(blob.pixels)} exceeds max {self.max_blob_bytes}")
        path = self._blob_path(blob.digest)
        if not path.exists():
            _atomic_write(path, blob.to_ppm())
        return blob.digest

    def get_blob(self, digest: str) -> bytes:
        path = self._blob_path(digest)
        if not path.exists():
            raise UnknownDigest(f"no blob {digest}")
        return path.read_bytes()

    def check_token(self, token: object) -> bool:
        return isinstance(token, str) and hmac.compare_digest(token, self.invite_token)

    def close(self):
        if self._log_file is not None:
            self._log_file.close()
            self._log_file = None


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


class SyncServer:
    """TCP front end: many concurrent clients, per-project serialized sequencing."""

    def __init__(
        self,
        data_dir: str | Path,
        listen: tuple[str, int] = ("127.0.0.1", 0),
        max_blob_bytes: int = DEFAULT_MAX_BLOB_BYTES,
        id_source: IdSource | None = None,
    ):
        self.data_dir = Path(data_dir)
        self.projects_dir = self.data_dir / "projects"
        self.projects_dir.mkdir(parents=True, exist_ok=True)
        self.max_blob_bytes = max_blob_bytes
        self._id_source = id_source
        self._projects: dict[str, ProjectStore] = {}
        self._projects_lock = threading.Lock()
        self._listener: socket.socket | None = None
        self._accept_thread: threading.Thread | None = None
        self._conn_threads: list[threading.Thread] = []
        self._open_streams: set[FrameStream] = set()
        self._running = False
        self._listen_addr = listen
        self._load_existing()

    def _load_existing(self):
        for entry in sorted(self.projects_dir.iterdir()) if self.projects_dir.exists() else []:
            if entry.is_dir() and (entry / "meta.json").exists():
                store = ProjectStore.load(entry, self.max_blob_bytes)
                self._projects[store.project_id] = store

    # -- project management

    def create_project(self, name: str) -> tuple[str, str]:
        with self._projects_lock:
            store = ProjectStore.create(self.projects_dir, name, self.max_blob_bytes, self._id_source)
            self._projects[store.project_id] = store
            return store.project_id, store.invite_token

    def _project(self, project_id: object) -> ProjectStore:
        if not is_valid_id(project_id):
            raise UnknownProject(f"bad project id {project_id!r}")
        store = self._projects.get(project_id)  # type: ignore[arg-type]
        if store is None:
            raise UnknownProject(f"no project {project_id}")
        return store

    def _authed(self, msg: dict) -> ProjectStore:
        store = self._project(msg.get("project_id"))
        if not store.check_token(msg.get("token")):
            raise AuthFailure("invite token mismatch")
        return store

    # -- lifecycle

    def start(self):
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind(self._listen_addr)
        self._listener.listen(64)
        self._listener.settimeout(0.2)  # lets the accept loop notice stop()
        self._running = True
        self._accept_thread = threading.Thread(target=self._accept_loop, name="coml-accept", daemon=True)
        self._accept_thread.start()
        return self

    @property
    def address(self) -> tuple[str, int]:
        assert self._listener is not None
        return self._listener.getsockname()

    def stop(self, join: bool = True):
        """Shut down abruptly; used both for clean exit and crash simulation.

        Durability never depends on this running: every acked op is already
        fsync'd. ``join=False`` skips waiting for worker threads (they are
        daemons and exit as their sockets die), which crash loops rely on.
        """
        self._running = False
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        for stream in list(self._open_streams):
            stream.close()
        if join:
            if self._accept_thread is not None:
                self._accept_thread.join(timeout=2)
            for t in self._conn_threads:
                t.join(timeout=2)
        for store in self._projects.values():
            store.close()

    def _accept_loop(self):
        assert self._listener is not None
        while self._running:
            try:
                sock, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            sock.settimeout(None)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            stream = FrameStream(sock)
            self._open_streams.add(stream)
            t = threading.Thread(target=self._serve_connection, args=(stream,), daemon=True)
            self._conn_threads.append(t)
            t.start()

    # -- connection handling

    def _serve_connection(self, stream: FrameStream):
        joined: ProjectStore | None = None
        try:
            while True:
                msg = stream.recv_json()
                if msg is None:
                    return
                try:
                    joined = self._dispatch(stream, msg, joined)
                except CoMLError as exc:
                    stream.send_json(wire.error_message(exc.code, str(exc)))
        except CoMLError:
            pass  # connection-level failure; drop the client
        finally:
            if joined is not None:
                with joined.lock:
                    joined.subscribers.pop(stream, None)
            self._open_streams.discard(stream)
            stream.close()

    def _dispatch(self, stream: FrameStream, msg: dict, joined: ProjectStore | None) -> ProjectStore | None:
        mtype = msg.get("type")
        if mtype == wire.PROJECT_CREATE:
            name = msg.get("name")
            if not isinstance(name, str):
                raise MalformedOp("PROJECT_CREATE needs a name")
            project_id, token = self.create_project(name)
            stream.send_json({"type": wire.PROJECT_CREATED, "project_id": project_id, "invite_token": token})
            return joined
        if mtype == wire.HELLO:
            store = self._authed(msg)
            device_id = msg.get("device_id")
            last_seq = msg.get("last_seq", 0)
            if not is_valid_id(device_id) or not isinstance(last_seq, int) or last_seq < 0:
                raise MalformedOp("HELLO needs device_id and last_seq")
            # snapshot + subscribe atomically so no commit is missed or duplicated
            with store.lock:
                backlog = store.ops_since(min(last_seq, store.applied_seq()))
                store.subscribers[stream] = device_id  # type: ignore[assignment]
                stream.send_json({"type": wire.WELCOME, "project_id": store.project_id, "applied_seq": store.applied_seq()})
                stream.send_json({"type": wire.DELTA, "ops": [op_to_dict(op) for op in backlog]})
            return store
        if mtype == wire.OP_SUBMIT:
            store = self._authed(msg)
            op = op_from_dict(msg.get("op"))
            with store.lock:
                sequenced, duplicate = store.sequence(op)
                commit = {"type": wire.OP_COMMIT, "op": op_to_dict(sequenced)}
                if duplicate:
                    stream.send_json(commit)  # replay the original ack to the retrier
                else:
                    self._broadcast(store, commit, submitter=stream)
            return joined
        if mtype == wire.BLOB_PUT:
            # consume the payload frame before validating anything, or an
            # error reply would leave the binary frame queued as "JSON"
            payload = stream.recv_frame()
            store = self._authed(msg)
            declared_len = msg.get("len")
            if not isinstance(declared_len, int) or declared_len < 0 or declared_len > wire.MAX_FRAME:
                raise MalformedOp("BLOB_PUT needs len")
            if payload is None or len(payload) != declared_len:
                raise MalformedOp("BLOB_PUT payload length mismatch")
            digest = store.put_blob(payload)
            declared = msg.get("digest")
            if declared is not None and declared != digest:
                raise MalformedImage(f"declared digest {declared} but content is {digest}")
            stream.send_json({"type": wire.BLOB_PUT_OK, "digest": digest})
            return joined
        if mtype == wire.BLOB_GET:
            store = self._authed(msg)
            digest = msg.get("digest")
            if not isinstance(digest, str):
                raise MalformedOp("BLOB_GET needs digest")
            data = store.get_blob(digest)
            stream.send_json({"type": wire.BLOB_DATA, "digest": digest, "len": len(data)})
            stream.send_frame(data)
            return joined
        raise MalformedOp(f"unknown message type {mtype!r}")

    def _broadcast(self, store: ProjectStore, commit: dict, submitter: FrameStream):
        """Deliver one commit to every subscriber; caller holds store.lock."""
        dead = []
        targets = list(store.subscribers)
        if submitter not in store.subscribers:
            targets.append(submitter)  # submitter may submit before HELLO
        for peer in targets:
            try:
                peer.send_json(commit)
            except CoMLError:
                dead.append(peer)
        for peer in dead:
            store.subscribers.pop(peer, None)
