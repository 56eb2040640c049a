"""Framed JSON transport shared by the sync server, clients, and local API.

Every message is a 4-byte big-endian length followed by the payload. Payloads
are UTF-8 JSON objects with a ``type`` field; blob transfer interleaves one
raw binary frame immediately after its announcing JSON frame (BLOB_PUT /
BLOB_DATA), so framing is uniform and context decides interpretation.
"""

from __future__ import annotations

import json
import socket
import struct
import threading

from .errors import ConnectivityError, MalformedOp

HEADER = struct.Struct(">I")
MAX_FRAME = 64 * 1024 * 1024  # generous: one maximal blob plus slack

# server <-> client message types
HELLO = "HELLO"
WELCOME = "WELCOME"
OP_SUBMIT = "OP_SUBMIT"
OP_COMMIT = "OP_COMMIT"
DELTA = "DELTA"
BLOB_PUT = "BLOB_PUT"
BLOB_PUT_OK = "BLOB_PUT_OK"
BLOB_GET = "BLOB_GET"
BLOB_DATA = "BLOB_DATA"
PROJECT_CREATE = "PROJECT_CREATE"
PROJECT_CREATED = "PROJECT_CREATED"
ERROR = "ERROR"


class FrameStream:
    """Thread-safe framed reader/writer over one connected socket.

    Sends may come from several threads (broadcasts vs. responses) and are
    serialized by a lock; receives must come from a single reader thread.
    """

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._send_lock = threading.Lock()

    def send_frame(self, payload: bytes):
        if len(payload) > MAX_FRAME:
            raise ConnectivityError(f"frame of {len(payload)} bytes exceeds limit")
        with self._send_lock:
            try:
                self.sock.sendall(HEADER.pack(len(payload)) + payload)
            except OSError as exc:
                raise ConnectivityError(f"send failed: {exc}") from exc

    def send_json(self, obj: dict):
        self.send_frame(json.dumps(obj, separators=(",", ":"), ensure_ascii=False).encode("utf-8"))

    def recv_frame(self) -> bytes | None:
        """One frame, or None on clean EOF at a frame boundary."""
        header = self._recv_exact(HEADER.size, allow_eof=True)
        if header is None:
            return None
        (length,) = HEADER.unpack(header)
        if length > MAX_FRAME:
            raise ConnectivityError(f"peer announced {length}-byte frame")
        return self._recv_exact(length, allow_eof=False)

    def recv_json(self) -> dict | None:
        frame = self.recv_frame()
        if frame is None:
            return None
        try:
            obj = json.loads(frame.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedOp(f"invalid JSON frame: {exc}") from exc
        if not isinstance(obj, dict):
            raise MalformedOp("JSON frame is not an object")
        return obj

    def _recv_exact(self, n: int, allow_eof: bool) -> bytes | None:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self.sock.recv(n - len(buf))
            except OSError as exc:
                raise ConnectivityError(f"recv failed: {exc}") from exc
            if not chunk:
                if allow_eof and not buf:
                    return None
                raise ConnectivityError("connection closed mid-frame")
            buf.extend(chunk)
        return bytes(buf)

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def connect(addr: tuple[str, int], timeout: float | None = 10.0) -> FrameStream:
    try:
        sock = socket.create_connection(addr, timeout=timeout)
    except OSError as exc:
        raise ConnectivityError(f"cannot connect to {addr[0]}:{addr[1]}: {exc}") from exc
    sock.settimeout(None)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return FrameStream(sock)


def error_message(code: str, detail: str) -> dict:
    return {"type": ERROR, "code": code, "detail": detail}
