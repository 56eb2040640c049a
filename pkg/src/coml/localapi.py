"""The agent's local API: the one protocol the CLI and web UI consume.

Two transports carry the same JSON message schema:

- a framed TCP socket (4-byte length + JSON, binary payload frames after
  messages that announce ``len``), mirroring the server wire format; and
- an HTTP bridge for browsers: ``POST /api`` with the message as the body
  (binary payloads as ``payload_b64``), ``GET /api/stream`` as a
  server-sent-events push channel, and ``GET /blob/<digest>`` for images.

The UI holds no authoritative state; every mutation lands here.
"""

from __future__ import annotations

import base64
import json
import queue
import socket
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from . import wire
from .agent import Agent, record_to_dict
from .domain import Split
from .errors import CoMLError, MalformedOp, UnknownDigest, ValidationError
from .wire import FrameStream

# messages that carry an image payload
_BINARY_REQUESTS = {"CAPTURE", "TEST_PHOTO", "LIVE_FRAME", "GAME_ROUND"}


def _split(value: object) -> Split:
    if value == Split.TRAINING.value:
        return Split.TRAINING
    if value == Split.TESTING.value:
        return Split.TESTING
    raise ValidationError(f"unknown split {value!r}")


def _parse_addr(value: object) -> tuple[str, int]:
    if not isinstance(value, str) or ":" not in value:
        raise ValidationError(f"address must be host:port, got {value!r}")
    host, port = value.rsplit(":", 1)
    return host, int(port)


def handle_message(agent: Agent, msg: dict, payload: bytes | None) -> tuple[dict, bytes | None]:
    """Dispatch one local-API message; returns (reply fields, reply payload)."""
    mtype = msg.get("type")
    if mtype in _BINARY_REQUESTS and payload is None:
        raise MalformedOp(f"{mtype} requires an image payload")

    if mtype == "PROJECT_INFO":
        return {
            "project_id": agent.project_id,
            "device_id": agent.device_id,
            "connection": agent.connection_state,
            "applied_seq": agent.replica.project.applied_seq if agent.replica else 0,
            "labels": agent.label_list() if agent.replica else [],
        }, None
    if mtype == "JOIN":
        agent.join(_parse_addr(msg.get("server")), msg["project_id"], msg["token"])
        return {"applied_seq": agent.replica.project.applied_seq}, None
    if mtype == "WAIT_SYNCED":
        seq = msg.get("seq")
        applied = agent.wait_synced(seq if isinstance(seq, int) else None, timeout=float(msg.get("timeout", 10.0)))
        return {"applied_seq": applied}, None
    if mtype == "LABEL_ADD":
        return {"label_id": agent.add_label(msg["name"])}, None
    if mtype == "LABEL_RENAME":
        agent.rename_label(msg["label_id"], msg["name"])
        return {}, None
    if mtype == "LABEL_DELETE":
        agent.delete_label(msg["label_id"])
        return {}, None
    if mtype == "CAPTURE":
        label_id = msg.get("label_id") or agent.resolve_label(msg["label_name"], create=bool(msg.get("create_label")))
        sample_id = agent.capture(label_id, payload, _split(msg.get("split")), msg.get("tags", []))
        return {"sample_id": sample_id, "label_id": label_id}, None
    if mtype == "SAMPLE_DELETE":
        agent.delete_sample(msg["sample_id"])
        return {}, None
    if mtype == "SAMPLE_RELABEL":
        return {"new_sample_id": agent.relabel_sample(msg["sample_id"], msg["label_id"])}, None
    if mtype == "RETRAIN":
        model = agent.retrain(int(msg.get("seed", 0)))
        stats = agent.stats()
        return {
            "version": model.version,
            "label_order": model.label_order,
            "train_sample_count": model.train_sample_count,
            "record_count": len(agent.records),
            "weighted_accuracy": stats["weighted_accuracy"],
        }, None
    if mtype == "TEST_PHOTO":
        record = agent.test_photo(msg["label_id"], payload, msg.get("tags", []))
        return {"record": record_to_dict(record)}, None
    if mtype == "LIVE_START":
        agent.live_start()
        return {}, None
    if mtype == "LIVE_FRAME":
        return {"result": agent.live_frame(payload)}, None
    if mtype == "LIVE_STOP":
        agent.live_stop()
        return {}, None
    if mtype == "GAME_START":
        return agent.game_start(int(msg.get("seed", 0))), None
    if mtype == "GAME_ROUND":
        return agent.game_round(payload), None
    if mtype == "GAME_END":
        return {"session": agent.game_end()}, None
    if mtype == "DASHBOARD_QUERY":
        return agent.dashboard(_split(msg.get("split")), int(msg.get("page", 1))), None
    if mtype == "STATS_QUERY":
        return agent.stats(), None
    if mtype == "EXPORT_MODEL":
        return {"model": agent.export_model()}, None
    if mtype == "BLOB_FETCH":
        data = agent.blob_bytes(msg["digest"])
        return {"digest": msg["digest"], "len": len(data)}, data
    raise MalformedOp(f"unknown local API message {mtype!r}")


class LocalAPIServer:
    """Framed-TCP face of the local API, plus the one-way stream channel."""

    def __init__(self, agent: Agent, listen: tuple[str, int] = ("127.0.0.1", 0)):
        self.agent = agent
        self._listen = listen
        self._listener: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._streams: set[FrameStream] = set()
        self._running = False

    def start(self) -> "LocalAPIServer":
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind(self._listen)
        self._listener.listen(16)
        self._listener.settimeout(0.2)
        self._running = True
        t = threading.Thread(target=self._accept_loop, name="coml-localapi", daemon=True)
        t.start()
        self._threads.append(t)
        return self

    @property
    def address(self) -> tuple[str, int]:
        assert self._listener is not None
        return self._listener.getsockname()

    def stop(self):
        self._running = False
        if self._listener is not None:
            self._listener.close()
        for stream in list(self._streams):
            stream.close()

    def _accept_loop(self):
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
            self._streams.add(stream)
            t = threading.Thread(target=self._serve, args=(stream,), daemon=True)
            t.start()
            self._threads.append(t)

    def _serve(self, stream: FrameStream):
        try:
            while True:
                msg = stream.recv_json()
                if msg is None:
                    return
                if msg.get("type") == "STREAM_SUBSCRIBE":
                    self._pump_events(stream)
                    return
                payload = None
                if msg.get("type") in _BINARY_REQUESTS and isinstance(msg.get("len"), int):
                    payload = stream.recv_frame()
                try:
                    fields, reply_payload = handle_message(self.agent, msg, payload)
                except CoMLError as exc:
                    stream.send_json(wire.error_message(exc.code, str(exc)))
                    continue
                reply = {"type": "RESULT", "re": msg.get("type"), **fields}
                stream.send_json(reply)
                if reply_payload is not None:
                    stream.send_frame(reply_payload)
        except (CoMLError, OSError):
            pass
        finally:
            self._streams.discard(stream)
            stream.close()

    def _pump_events(self, stream: FrameStream):
        """Push agent events (live results, sync changes) until the peer goes."""
        events: queue.Queue[dict] = queue.Queue()
        self.agent.add_listener(events.put)
        stream.send_json({"type": "STREAM_BEGIN"})
        try:
            while self._running:
                try:
                    event = events.get(timeout=1.0)
                except queue.Empty:
                    continue
                stream.send_json(event)
        except CoMLError:
            pass
        finally:
            self.agent.remove_listener(events.put)


class AgentHTTPServer:
    """HTTP + SSE bridge so browsers can speak the same local API."""

    def __init__(self, agent: Agent, listen: tuple[str, int] = ("127.0.0.1", 0), ui_dir: str | Path | None = None):
        self.agent = agent
        self.ui_dir = Path(ui_dir) if ui_dir is not None else None
        handler = _make_handler(self)
        self._httpd = ThreadingHTTPServer(listen, handler)
        self._httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    def start(self) -> "AgentHTTPServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, name="coml-http", daemon=True)
        self._thread.start()
        return self

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[:2]

    def stop(self):
        self._httpd.shutdown()
        self._httpd.server_close()


_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".mjs": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
}


def _make_handler(bridge: AgentHTTPServer):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args):
            pass

        def _cors(self):
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")

        def _send_json(self, status: int, doc: dict):
            body = json.dumps(doc, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
            self.send_response(status)
            self._cors()
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_OPTIONS(self):
            self.send_response(204)
            self._cors()
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_POST(self):
            if self.path.rstrip("/") != "/api":
                self._send_json(404, {"code": "NOT_FOUND", "detail": self.path})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                msg = json.loads(self.rfile.read(length).decode("utf-8"))
                payload = None
                if isinstance(msg.get("payload_b64"), str):
                    payload = base64.b64decode(msg["payload_b64"])
                fields, reply_payload = handle_message(bridge.agent, msg, payload)
                if reply_payload is not None:
                    fields = {**fields, "payload_b64": base64.b64encode(reply_payload).decode("ascii")}
                self._send_json(200, fields)
            except UnknownDigest as exc:
                self._send_json(404, {"code": exc.code, "detail": str(exc)})
            except CoMLError as exc:
                self._send_json(400, {"code": exc.code, "detail": str(exc)})
            except (json.JSONDecodeError, ValueError, KeyError) as exc:
                self._send_json(400, {"code": "MALFORMED", "detail": str(exc)})

        def do_GET(self):
            if self.path.startswith("/api/stream"):
                self._serve_stream()
                return
            if self.path.startswith("/blob/"):
                self._serve_blob(self.path[len("/blob/") :])
                return
            self._serve_static()

        def _serve_stream(self):
            self.send_response(200)
            self._cors()
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.end_headers()
            events: queue.Queue[dict] = queue.Queue()
            bridge.agent.add_listener(events.put)
            try:
                self.wfile.write(b": connected\n\n")
                self.wfile.flush()
                while True:
                    try:
                        event = events.get(timeout=10.0)
                    except queue.Empty:
                        self.wfile.write(b": keepalive\n\n")
                        self.wfile.flush()
                        continue
                    data = json.dumps(event, separators=(",", ":"), ensure_ascii=False)
                    self.wfile.write(f"data: {data}\n\n".encode("utf-8"))
                    self.wfile.flush()
            except (BrokenPipeError, ConnectionResetError, OSError):
                pass
            finally:
                bridge.agent.remove_listener(events.put)

        def _serve_blob(self, digest: str):
            try:
                data = bridge.agent.blob_bytes(digest)
            except CoMLError as exc:
                self._send_json(404, {"code": exc.code, "detail": str(exc)})
                return
            self.send_response(200)
            self._cors()
            self.send_header("Content-Type", "image/x-portable-pixmap")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def _serve_static(self):
            if bridge.ui_dir is None:
                self._send_json(404, {"code": "NOT_FOUND", "detail": "no UI bundled; use /api"})
                return
            rel = self.path.split("?", 1)[0].lstrip("/") or "index.html"
            path = (bridge.ui_dir / rel).resolve()
            if not str(path).startswith(str(bridge.ui_dir.resolve())) or not path.is_file():
                self._send_json(404, {"code": "NOT_FOUND", "detail": self.path})
                return
            body = path.read_bytes()
            self.send_response(200)
            self._cors()
            self.send_header("Content-Type", _CONTENT_TYPES.get(path.suffix, "application/octet-stream"))
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

    return Handler
