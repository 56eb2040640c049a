"""Client side of the sync protocol: one duplex stream per device.

A background reader thread routes incoming frames: OP_COMMIT and DELTA go to
the ``on_ops`` callback (the replica's apply loop); WELCOME, BLOB_PUT_OK,
BLOB_DATA, PROJECT_CREATED, and ERROR resolve the single request in flight.
Requests are serialized, one at a time per connection.

Callers must not hold their own state locks while waiting on a request, or
the reader thread can deadlock trying to deliver ops into that state.
"""

from __future__ import annotations

import threading
from typing import Callable

from . import wire
from .errors import (
    AuthFailure,
    CoMLError,
    ConnectivityError,
    MalformedImage,
    MalformedOp,
    MissingBlob,
    UnknownDigest,
    UnknownProject,
)
from .replication import DatasetOp, op_from_dict, op_to_dict

_ERROR_CLASSES = {
    cls.code: cls
    for cls in (AuthFailure, UnknownProject, MissingBlob, UnknownDigest, MalformedImage, MalformedOp)
}

REQUEST_TIMEOUT = 30.0


def _wire_error(msg: dict) -> CoMLError:
    return _ERROR_CLASSES.get(msg.get("code", ""), CoMLError)(msg.get("detail", ""))


class _Pending:
    """One in-flight request: resolved with a message, blob, or error."""

    def __init__(self, commit_op_id: str | None = None):
        self.commit_op_id = commit_op_id
        self.event = threading.Event()
        self.result: dict | tuple[dict, bytes] | None = None
        self.error: CoMLError | None = None

    def resolve(self, result=None, error: CoMLError | None = None):
        self.result = result
        self.error = error
        self.event.set()

    def wait(self, timeout: float):
        if not self.event.wait(timeout):
            raise ConnectivityError("timed out waiting for server response")
        if self.error is not None:
            raise self.error
        return self.result


class SyncConnection:
    def __init__(
        self,
        addr: tuple[str, int],
        on_ops: Callable[[list[DatasetOp]], None] | None = None,
        on_disconnect: Callable[[], None] | None = None,
    ):
        self.addr = addr
        self.on_ops = on_ops or (lambda ops: None)
        self.on_disconnect = on_disconnect
        self.stream = wire.connect(addr)
        self._request_lock = threading.Lock()  # one outstanding request
        self._pending_lock = threading.Lock()
        self._pending: _Pending | None = None
        self.closed = False
        self._reader = threading.Thread(target=self._read_loop, name="coml-client-reader", daemon=True)
        self._reader.start()

    # -- reader

    def _read_loop(self):
        try:
            while True:
                msg = self.stream.recv_json()
                if msg is None:
                    break
                self._route(msg)
        except (CoMLError, OSError):
            pass
        finally:
            self.closed = True
            with self._pending_lock:
                if self._pending is not None:
                    self._pending.resolve(error=ConnectivityError("connection lost"))
                    self._pending = None
            if self.on_disconnect is not None:
                self.on_disconnect()

    def _route(self, msg: dict):
        mtype = msg.get("type")
        if mtype == wire.OP_COMMIT:
            op = op_from_dict(msg.get("op"))
            self.on_ops([op])
            with self._pending_lock:
                if self._pending is not None and self._pending.commit_op_id == op.op_id:
                    self._pending.resolve(msg)
                    self._pending = None
        elif mtype == wire.DELTA:
            self.on_ops([op_from_dict(o) for o in msg.get("ops", [])])
        else:
            payload = None
            if mtype == wire.BLOB_DATA:
                payload = self.stream.recv_frame()
                if payload is None:
                    raise ConnectivityError("stream ended before blob payload")
            with self._pending_lock:
                pending, self._pending = self._pending, None
            if pending is None:
                return  # stray response (e.g. error for a fire-and-forget submit)
            if mtype == wire.ERROR:
                pending.resolve(error=_wire_error(msg))
            elif payload is not None:
                pending.resolve((msg, payload))
            else:
                pending.resolve(msg)

    # -- request/response

    def _begin(self, commit_op_id: str | None = None) -> _Pending:
        pending = _Pending(commit_op_id)
        with self._pending_lock:
            if self.closed:
                raise ConnectivityError("connection lost")
            self._pending = pending
        return pending

    def hello(self, project_id: str, token: str, device_id: str, last_seq: int) -> int:
        """Join a project; the backlog DELTA flows to on_ops. Returns server seq."""
        with self._request_lock:
            pending = self._begin()
            self.stream.send_json(
                {"type": wire.HELLO, "project_id": project_id, "token": token, "device_id": device_id, "last_seq": last_seq}
            )
            msg = pending.wait(REQUEST_TIMEOUT)
            assert isinstance(msg, dict)
            if msg.get("type") != wire.WELCOME:
                raise ConnectivityError(f"expected WELCOME, got {msg.get('type')}")
            return int(msg.get("applied_seq", 0))

    def submit_op(self, project_id: str, token: str, op: DatasetOp, wait: bool = True, timeout: float = REQUEST_TIMEOUT):
        """Submit one op; with wait=True, returns once its commit echoed back."""
        with self._request_lock:
            pending = self._begin(commit_op_id=op.op_id) if wait else None
            self.stream.send_json({"type": wire.OP_SUBMIT, "project_id": project_id, "token": token, "op": op_to_dict(op)})
            if pending is not None:
                pending.wait(timeout)

    def put_blob(self, project_id: str, token: str, data: bytes, digest: str | None = None) -> str:
        with self._request_lock:
            pending = self._begin()
            msg = {"type": wire.BLOB_PUT, "project_id": project_id, "token": token, "len": len(data)}
            if digest is not None:
                msg["digest"] = digest  # server verifies the declaration
            self.stream.send_json(msg)
            self.stream.send_frame(data)
            reply = pending.wait(REQUEST_TIMEOUT)
            assert isinstance(reply, dict)
            return reply["digest"]

    def get_blob(self, project_id: str, token: str, digest: str) -> bytes:
        with self._request_lock:
            pending = self._begin()
            self.stream.send_json({"type": wire.BLOB_GET, "project_id": project_id, "token": token, "digest": digest})
            item = pending.wait(REQUEST_TIMEOUT)
            if not isinstance(item, tuple):
                raise ConnectivityError("expected blob payload")
            return item[1]

    def create_project(self, name: str) -> tuple[str, str]:
        with self._request_lock:
            pending = self._begin()
            self.stream.send_json({"type": wire.PROJECT_CREATE, "name": name})
            msg = pending.wait(REQUEST_TIMEOUT)
            assert isinstance(msg, dict)
            return msg["project_id"], msg["invite_token"]

    def close(self):
        self.closed = True
        self.on_disconnect = None
        self.stream.close()
