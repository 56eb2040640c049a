"""Operator command line: run the server, drive agents, replay sessions.

Exit codes are a stable CI contract: 0 success, 2 script error (including
usage errors), 3 connectivity, 4 data error.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import threading
from pathlib import Path

from .agent import Agent
from .client import SyncConnection
from .domain import Split
from .errors import CoMLError, ConnectivityError, ScriptError
from .evaluation import dashboard_order, run_game, weighted_accuracy
from .localapi import AgentHTTPServer, LocalAPIServer
from .scripting import _feed_images, import_dir, run_script
from .server import DATA_DIR_ENV, DEFAULT_MAX_BLOB_BYTES, SyncServer
from .telemetry import load_log, retrain_stats, timeline_export, timeline_svg, usage_counts
from .training import classify, load_model

EXIT_OK = 0
EXIT_SCRIPT = 2
EXIT_CONNECTIVITY = 3
EXIT_DATA = 4


def _parse_addr(value: str) -> tuple[str, int]:
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected host:port, got {value!r}")
    return host, int(port)


def _common_flags(p: argparse.ArgumentParser, project: bool = True):
    p.add_argument("--server", type=_parse_addr, help="sync server address host:port")
    if project:
        p.add_argument("--project", help="project id")
        p.add_argument("--token", help="invite token")
    p.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    p.add_argument("--json", action="store_true", help="machine-readable output")


def _emit(args, doc: dict, human: str | None = None):
    if args.json or human is None:
        print(json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False))
    else:
        print(human)


def _ephemeral_agent(args) -> Agent:
    if not args.server or not args.project or not args.token:
        raise ConnectivityError("--server, --project, and --token are required")
    agent = Agent()
    agent.join(args.server, args.project, args.token)
    return agent


def cmd_serve(args) -> int:
    data_dir = os.environ.get(DATA_DIR_ENV) or args.data_dir
    server = SyncServer(data_dir, listen=args.listen, max_blob_bytes=args.max_blob_bytes).start()
    host, port = server.address
    print(f"serving on {host}:{port}, data in {data_dir}", flush=True)
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    stop.wait()
    server.stop()
    return EXIT_OK


def cmd_new_project(args) -> int:
    if not args.server:
        raise ConnectivityError("--server is required")
    conn = SyncConnection(args.server)
    try:
        project_id, token = conn.create_project(args.name)
    finally:
        conn.close()
    _emit(args, {"project_id": project_id, "invite_token": token}, f"project_id={project_id}\ninvite_token={token}")
    return EXIT_OK


def cmd_join(args) -> int:
    agent = Agent(agent_dir=args.agent_dir)
    if args.export_log and agent.agent_dir is None:
        raise ScriptError("--export-log requires --agent-dir")
    agent.join(args.server, args.project, args.token)
    api = LocalAPIServer(agent, ("127.0.0.1", args.api_port)).start()
    http = AgentHTTPServer(agent, ("127.0.0.1", args.http_port), ui_dir=args.ui).start()
    print(f"device {agent.device_id}", flush=True)
    print(f"local api on {api.address[0]}:{api.address[1]}", flush=True)
    print(f"web ui on http://{http.address[0]}:{http.address[1]}/", flush=True)
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    stop.wait()
    api.stop()
    http.stop()
    agent.close()
    return EXIT_OK


def cmd_import(args) -> int:
    agent = _ephemeral_agent(args)
    try:
        count, errors = import_dir(
            agent, args.dir, args.label, Split(args.split), tuple(args.tags or ()), args.continue_on_error
        )
        agent.wait_synced()
    finally:
        agent.close()
    _emit(args, {"imported": count, "errors": errors}, f"imported {count} samples" + (f", {len(errors)} errors" if errors else ""))
    return EXIT_OK if not errors else EXIT_DATA


def cmd_train(args) -> int:
    agent = _ephemeral_agent(args)
    try:
        model = agent.retrain(args.seed)
        stats = agent.stats()
        if args.out:
            Path(args.out).write_text(agent.export_model(), "utf-8")
    finally:
        agent.close()
    doc = {
        "version": model.version,
        "labels": len(model.label_order),
        "train_sample_count": model.train_sample_count,
        "weighted_accuracy": stats["weighted_accuracy"],
    }
    _emit(args, doc, f"trained v{model.version} on {model.train_sample_count} samples; accuracy {stats['weighted_accuracy']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import evaluate_all

    agent = _ephemeral_agent(args)
    try:
        model = load_model(args.model)
        view = agent.view()
        agent.ensure_blobs([s.blob for s in view.live_samples() if s.split is Split.TESTING])
        records = evaluate_all(view, model, agent.blobs)
        test_counts: dict[str, int] = {}
        for record in records:
            test_counts[record.label] = test_counts.get(record.label, 0) + 1
        accuracy = weighted_accuracy(records, test_counts) if records else None
    finally:
        agent.close()
    ordered = dashboard_order(records)
    doc = {
        "records": [
            {"sample_id": r.sample_id, "label": r.label, "predicted": r.predicted, "correct": r.correct}
            for r in ordered
        ],
        "weighted_accuracy": accuracy,
        "testing_images": len(records),
    }
    _emit(args, doc, f"{len(records)} test records, weighted accuracy {accuracy}")
    return EXIT_OK


def cmd_game(args) -> int:
    model = load_model(args.model)
    images = _feed_images(Path(args.images))
    session = run_game(model.label_order, lambda blob: classify(model, blob), images, args.seed)
    _emit(args, session.to_dict(), f"{len(session.rounds)} rounds, total {session.total_score:.1f}")
    return EXIT_OK


def cmd_stats(args) -> int:
    logs = {Path(p).stem: load_log(p) for p in args.logs}
    stats = retrain_stats(logs)
    doc = {
        "per_team_total": stats.per_team_total,
        "per_device_totals": stats.per_device_totals,
        "mean": stats.mean,
        "sd": stats.sd,
        "usage": {team: usage_counts(events) for team, events in logs.items()},
    }
    _emit(args, doc, None)
    return EXIT_OK


def cmd_export_log(args) -> int:
    source = Path(args.source)
    if source.is_dir():
        source = source / "activity.ndjson"
    if not source.exists():
        raise ScriptError(f"no activity log at {source}")
    data = source.read_text("utf-8")
    if args.out:
        Path(args.out).write_text(data, "utf-8")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(data)
    return EXIT_OK


def cmd_timeline_svg(args) -> int:
    events = load_log(args.log)
    if not events:
        raise ScriptError(f"{args.log} holds no events")
    start = args.start if args.start is not None else min(e.ts for e in events)
    end = args.end if args.end is not None else max(e.ts for e in events)
    doc = timeline_export(events, (start, end))
    if args.json:
        print(json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False))
        return EXIT_OK
    svg = timeline_svg(doc)
    if args.out:
        Path(args.out).write_text(svg, "utf-8")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(svg + "\n")
    return EXIT_OK


def cmd_script(args) -> int:
    project = None
    if args.project and args.token:
        project = (args.project, args.token)
    result = run_script(
        Path(args.file),
        seed=args.seed,
        server_addr=args.server,
        project=project,
        out_dir=args.out_dir,
    )
    _emit(args, result["summary"], json.dumps(result["summary"], indent=2, sort_keys=True, ensure_ascii=False))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coml", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the sync server")
    p.add_argument("--listen", type=_parse_addr, default=("127.0.0.1", 7700))
    p.add_argument("--data-dir", default="./coml-data", help=f"storage root (env {DATA_DIR_ENV} overrides)")
    p.add_argument("--max-blob-bytes", type=int, default=DEFAULT_MAX_BLOB_BYTES)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("new-project", help="create a project, print id and invite token")
    p.add_argument("name")
    _common_flags(p, project=False)
    p.set_defaults(fn=cmd_new_project)

    p = sub.add_parser("join", help="run a device agent with its local API and web UI")
    _common_flags(p)
    p.add_argument("--agent-dir", help="where this device persists its model, log, and high score")
    p.add_argument("--api-port", type=int, default=0)
    p.add_argument("--http-port", type=int, default=0)
    p.add_argument("--ui", help="directory of web UI files to serve")
    p.add_argument("--export-log", action="store_true", help="keep the NDJSON activity log (implied by --agent-dir)")
    p.set_defaults(fn=cmd_join)

    p = sub.add_parser("import", help="import a directory of .ppm files under one label")
    p.add_argument("dir")
    p.add_argument("--label", required=True)
    p.add_argument("--split", choices=[s.value for s in Split], default="training")
    p.add_argument("--tags", nargs="*")
    p.add_argument("--continue-on-error", action="store_true")
    _common_flags(p)
    p.set_defaults(fn=cmd_import)

    p = sub.add_parser("train", help="train a model on the project's current data")
    p.add_argument("--out", help="write the model file here")
    _common_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="classify every live test sample under a model")
    p.add_argument("--model", required=True)
    _common_flags(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("game", help="play the evaluation game against a directory feed")
    p.add_argument("--model", required=True)
    p.add_argument("--images", required=True, help="directory supplying end-of-round images")
    _common_flags(p, project=False)
    p.set_defaults(fn=cmd_game)

    p = sub.add_parser("stats", help="retrain-frequency statistics over activity logs")
    p.add_argument("logs", nargs="+", help="NDJSON activity logs, one per team")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("export-log", help="dump an agent's NDJSON activity log")
    p.add_argument("source", help="agent dir or log file")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_export_log)

    p = sub.add_parser("timeline-svg", help="render an activity log window as SVG")
    p.add_argument("log")
    p.add_argument("--start", type=int, help="window start (ms); defaults to first event")
    p.add_argument("--end", type=int, help="window end (ms); defaults to last event")
    p.add_argument("--out")
    p.add_argument("--json", action="store_true", help="emit the timeline JSON instead of SVG")
    p.set_defaults(fn=cmd_timeline_svg)

    p = sub.add_parser("script", help="replay a session script against a (spawned) server")
    p.add_argument("file")
    p.add_argument("--out-dir", help="write telemetry.ndjson and summary.json here")
    _common_flags(p)
    p.set_defaults(fn=cmd_script)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ScriptError as exc:
        print(f"script error: {exc}", file=sys.stderr)
        return EXIT_SCRIPT
    except ConnectivityError as exc:
        print(f"connectivity error: {exc}", file=sys.stderr)
        return EXIT_CONNECTIVITY
    except CoMLError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
