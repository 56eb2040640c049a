"""Session scripts: deterministic multi-device replays without humans.

A script is NDJSON, one timed directive per line, mirroring the telemetry
format so a recorded session can be replayed:

    {"at_ms": 0,    "device": "d1", "directive": "join"}
    {"at_ms": 500,  "device": "d1", "directive": "capture", "file": "a.ppm",
     "label": "apple", "split": "training", "tags": ["context:dark"]}
    {"at_ms": 900,  "device": "d1", "directive": "retrain"}
    {"at_ms": 1200, "device": "d1", "directive": "disconnect"}

Directives: join, capture (file or dir), retrain, test, game, disconnect,
reconnect, plus label management (label, rename-label, delete-label,
delete-sample) so replays can exercise ontology edits and delete cascades.
Labels named in capture/test are created on first use.

Runs are deterministic for a fixed seed: ids, timestamps, shuffles, and the
single-threaded dispatch order all flow from (script, seed), so two runs
produce identical summaries and digests.
"""

from __future__ import annotations

import hashlib
import json
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .agent import Agent
from .domain import Split, canonical_digest, display_names, live_counts
from .errors import CoMLError, MalformedImage, ScriptError
from .ids import IdSource
from .image import parse_ppm
from .scripting_clock import VirtualClock
from .server import SyncServer
from .telemetry import event_to_dict

_DIRECTIVES = {
    "join",
    "capture",
    "retrain",
    "test",
    "game",
    "disconnect",
    "reconnect",
    "label",
    "rename-label",
    "delete-label",
    "delete-sample",
}


@dataclass
class Directive:
    line: int
    at_ms: int
    device: str
    action: str
    args: dict


def parse_script(text: str) -> list[Directive]:
    directives = []
    last_at = 0
    joined: set[str] = set()
    for line_no, raw in enumerate(text.splitlines(), 1):
        raw = raw.strip()
        if not raw or raw.startswith("#"):
            continue
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ScriptError(f"invalid JSON: {exc}", line_no) from exc
        if not isinstance(doc, dict):
            raise ScriptError("directive must be an object", line_no)
        action = doc.get("directive")
        if action not in _DIRECTIVES:
            raise ScriptError(f"unknown directive {action!r}", line_no)
        at_ms = doc.get("at_ms", last_at)
        if not isinstance(at_ms, int) or at_ms < last_at:
            raise ScriptError(f"at_ms must be a nondecreasing integer (got {at_ms!r} after {last_at})", line_no)
        device = doc.get("device")
        if not isinstance(device, str) or not device:
            raise ScriptError("directive needs a device name", line_no)
        if action == "join":
            joined.add(device)
        elif device not in joined:
            raise ScriptError(f"device {device!r} used before its join directive", line_no)
        last_at = at_ms
        args = {k: v for k, v in doc.items() if k not in ("at_ms", "device", "directive")}
        directives.append(Directive(line_no, at_ms, device, action, args))
    return directives


def load_script(path: str | Path) -> list[Directive]:
    return parse_script(Path(path).read_text("utf-8"))


def _derive_seed(*parts) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def import_dir(
    agent: Agent,
    path: str | Path,
    label_name: str,
    split: Split,
    tags: tuple[str, ...] = (),
    continue_on_error: bool = False,
) -> tuple[int, list[str]]:
    """AddSample per .ppm file, in lexicographic filename order."""
    directory = Path(path)
    if not directory.is_dir():
        raise MalformedImage(f"{directory} is not a directory")
    label_id = agent.resolve_label(label_name, create=True)
    count = 0
    errors = []
    for file in sorted(directory.glob("*.ppm")):
        try:
            agent.capture(label_id, file.read_bytes(), split, tags)
            count += 1
        except MalformedImage as exc:
            if not continue_on_error:
                raise
            errors.append(f"{file.name}: {exc}")
    return count, errors


def _feed_images(directory: Path):
    files = sorted(directory.glob("*.ppm"))
    if not files:
        raise MalformedImage(f"no .ppm files in {directory}")
    return [parse_ppm(f.read_bytes()) for f in files]


class ScriptRunner:
    def __init__(
        self,
        directives: list[Directive],
        seed: int = 0,
        server_addr: tuple[str, int] | None = None,
        project: tuple[str, str] | None = None,  # (project_id, token) on an external server
        out_dir: str | Path | None = None,
        base_dir: str | Path | None = None,
    ):
        self.directives = directives
        self.seed = seed
        self.base_dir = Path(base_dir) if base_dir else Path.cwd()
        self.out_dir = Path(out_dir) if out_dir else None
        self.clock = VirtualClock()
        self.agents: dict[str, Agent] = {}
        self._retrain_counts: dict[str, int] = {}
        self._game_counts: dict[str, int] = {}
        self._last_trained: str | None = None
        self._own_server: SyncServer | None = None
        self._tmp: tempfile.TemporaryDirectory | None = None
        if server_addr is None:
            if self.out_dir is not None:
                data_dir = self.out_dir / "server-data"
            else:
                self._tmp = tempfile.TemporaryDirectory(prefix="coml-script-")
                data_dir = Path(self._tmp.name)
            self._own_server = SyncServer(data_dir, id_source=IdSource(seed)).start()
            server_addr = self._own_server.address
            project = None
        self.server_addr = server_addr
        if project is None:
            if self._own_server is not None:
                project = self._own_server.create_project("script")
            else:
                probe = Agent(id_source=IdSource(_derive_seed(seed, "probe")))
                project = probe.create_project(server_addr, "script")
                probe.close()
        self.project_id, self.token = project

    # -- execution

    def run(self) -> dict:
        try:
            for directive in self.directives:
                self.clock.advance_to(directive.at_ms)
                try:
                    self._execute(directive)
                except ScriptError:
                    raise
                except (CoMLError, OSError, KeyError) as exc:
                    raise ScriptError(f"{directive.action}: {exc}", directive.line) from exc
                # deterministic delivery schedule: every online replica fully
                # catches up before the next directive, so lamport stamps do
                # not depend on reader-thread timing
                self._quiesce()
            self._quiesce()
            return self._results()
        finally:
            self._cleanup()

    def _agent(self, directive: Directive) -> Agent:
        agent = self.agents.get(directive.device)
        if agent is None:
            raise ScriptError(f"device {directive.device!r} has not joined", directive.line)
        return agent

    def _execute(self, d: Directive):
        if d.action == "join":
            if d.device not in self.agents:
                agent_dir = self.out_dir / "agents" / d.device if self.out_dir else None
                agent = Agent(
                    id_source=IdSource(_derive_seed(self.seed, "device", d.device)),
                    agent_dir=agent_dir,
                    clock_ms=self.clock.ms,
                    clock_s=self.clock.s,
                    sleep=lambda _s: None,
                )
                self.agents[d.device] = agent
            self.agents[d.device].join(self.server_addr, self.project_id, self.token)
            return
        agent = self._agent(d)
        if d.action == "capture":
            label_id = agent.resolve_label(str(d.args["label"]), create=True)
            split = Split(d.args.get("split", "training"))
            tags = tuple(d.args.get("tags", []))
            for data in self._capture_payloads(d):
                agent.capture(label_id, data, split, tags)
        elif d.action == "retrain":
            n = self._retrain_counts.get(d.device, 0)
            seed = d.args.get("seed", _derive_seed(self.seed, "retrain", d.device, n))
            agent.retrain(int(seed))
            self._retrain_counts[d.device] = n + 1
            self._last_trained = d.device
        elif d.action == "test":
            label_id = agent.resolve_label(str(d.args["label"]), create=True)
            agent.test_photo(label_id, (self.base_dir / d.args["file"]).read_bytes(), tuple(d.args.get("tags", [])))
        elif d.action == "game":
            n = self._game_counts.get(d.device, 0)
            seed = d.args.get("seed", _derive_seed(self.seed, "game", d.device, n))
            images = _feed_images(self.base_dir / d.args["dir"])
            agent.play_game_feed(images, int(seed))
            self._game_counts[d.device] = n + 1
        elif d.action == "disconnect":
            agent.disconnect()
        elif d.action == "reconnect":
            agent.reconnect()
        elif d.action == "label":
            agent.resolve_label(str(d.args["name"]), create=True)
        elif d.action == "rename-label":
            agent.rename_label(agent.resolve_label(str(d.args["label"])), str(d.args["name"]))
        elif d.action == "delete-label":
            agent.delete_label(agent.resolve_label(str(d.args["label"])))
        elif d.action == "delete-sample":
            label_id = agent.resolve_label(str(d.args["label"]))
            index = int(d.args.get("index", 0))
            view = agent.view()
            candidates = sorted(
                (s for s in view.live_samples() if s.label == label_id),
                key=lambda s: (s.created_at, s.id),
            )
            if index >= len(candidates):
                raise ScriptError(f"label has {len(candidates)} live samples, no index {index}", d.line)
            agent.delete_sample(candidates[index].id)
        else:  # unreachable: parse_script filtered actions
            raise ScriptError(f"unhandled directive {d.action}", d.line)

    def _capture_payloads(self, d: Directive) -> list[bytes]:
        if "file" in d.args:
            return [(self.base_dir / d.args["file"]).read_bytes()]
        if "dir" in d.args:
            directory = self.base_dir / d.args["dir"]
            return [f.read_bytes() for f in sorted(directory.glob("*.ppm"))]
        raise ScriptError("capture needs file or dir", d.line)

    def _quiesce(self):
        """Let every connected replica catch up to the full op log."""
        if self._own_server is not None:
            stores = self._own_server._projects
            target = stores[self.project_id].applied_seq() if self.project_id in stores else 0
        else:
            target = max(
                (a.replica.project.applied_seq for a in self.agents.values() if a.replica is not None),
                default=0,
            )
        for agent in self.agents.values():
            if agent.connection_state == "live":
                agent.wait_synced(target)

    def _results(self) -> dict:
        digests = {}
        reference: Agent | None = None
        for name, agent in sorted(self.agents.items()):
            if agent.replica is not None:
                digests[name] = canonical_digest(agent.replica.project)
                if reference is None or agent.connection_state == "live":
                    reference = agent
        summary: dict = {
            "project_id": self.project_id,
            "seed": self.seed,
            "training_images": 0,
            "testing_images": 0,
            "label_counts": {},
            "weighted_accuracy": None,
            "retrain_counts": dict(sorted(self._retrain_counts.items())),
            "final_digests": digests,
        }
        if reference is not None:
            view = reference.replica.project
            names = display_names(view)
            counts = live_counts(view)
            summary["training_images"] = sum(c[0] for c in counts.values())
            summary["testing_images"] = sum(c[1] for c in counts.values())
            summary["label_counts"] = {
                names[label_id]: {"training": c[0], "testing": c[1]}
                for label_id, c in sorted(counts.items(), key=lambda kv: names[kv[0]])
            }
        if self._last_trained is not None:
            summary["weighted_accuracy"] = self.agents[self._last_trained].stats()["weighted_accuracy"]
        events = []
        logs = {}
        for name, agent in sorted(self.agents.items()):
            logs[name] = list(agent.log.events)
            events.extend((event.ts, name, i, event) for i, event in enumerate(agent.log.events))
        events.sort(key=lambda t: (t[0], t[1], t[2]))
        merged = [event for _, _, _, event in events]
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            with open(self.out_dir / "telemetry.ndjson", "w", encoding="utf-8") as f:
                for event in merged:
                    f.write(json.dumps(event_to_dict(event), separators=(",", ":"), ensure_ascii=False) + "\n")
            (self.out_dir / "summary.json").write_text(
                json.dumps(summary, indent=2, sort_keys=True, ensure_ascii=False) + "\n", "utf-8"
            )
        return {"summary": summary, "final_digest_per_device": digests, "logs": logs, "events": merged}

    def _cleanup(self):
        for agent in self.agents.values():
            agent.close()
        if self._own_server is not None:
            self._own_server.stop()
        if self._tmp is not None:
            self._tmp.cleanup()


def run_script(
    directives: list[Directive] | str | Path,
    seed: int = 0,
    server_addr: tuple[str, int] | None = None,
    project: tuple[str, str] | None = None,
    out_dir: str | Path | None = None,
    base_dir: str | Path | None = None,
) -> dict:
    if isinstance(directives, (str, Path)):
        base_dir = base_dir or Path(directives).parent
        directives = load_script(directives)
    runner = ScriptRunner(directives, seed=seed, server_addr=server_addr, project=project, out_dir=out_dir, base_dir=base_dir)
    return runner.run()
