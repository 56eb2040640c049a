import hashlib
import json
import random
import signal
import subprocess
import sys
import time
from pathlib import Path

import pytest

from coml.agent import Agent
from coml.cli import main
from coml.domain import Split
from coml.errors import ScriptError
from coml.scripting import import_dir, parse_script, run_script
from coml.server import SyncServer
from coml.telemetry import load_log

from conftest import make_image

FRUIT_COUNTS = {"apple": 22, "grapefruit": 7, "mango": 21, "orange": 20}
FRUIT_COLORS = {
    "apple": (200, 30, 30),
    "grapefruit": (240, 150, 130),
    "mango": (250, 190, 60),
    "orange": (240, 140, 20),
}


def write_fruit_fixture(root: Path) -> Path:
    """Image dirs plus a two-device script that mirrors the fruit dashboard."""
    rng = random.Random(11)
    for name, count in FRUIT_COUNTS.items():
        d = root / "images" / name
        d.mkdir(parents=True)
        for i in range(count):
            (d / f"{i:03d}.ppm").write_bytes(make_image(rng, 8, 8, base=FRUIT_COLORS[name]).to_ppm())
    lines = [
        {"at_ms": 0, "device": "d1", "directive": "join"},
        {"at_ms": 10, "device": "d2", "directive": "join"},
        {"at_ms": 100, "device": "d1", "directive": "capture", "dir": "images/apple", "label": "apple", "split": "training"},
        {"at_ms": 200, "device": "d2", "directive": "capture", "dir": "images/grapefruit", "label": "grapefruit", "split": "training"},
        {"at_ms": 300, "device": "d1", "directive": "capture", "dir": "images/mango", "label": "mango", "split": "training"},
        {"at_ms": 400, "device": "d2", "directive": "capture", "dir": "images/orange", "label": "orange", "split": "training"},
    ]
    script = root / "fruit-salad.ndjson"
    script.write_text("\n".join(json.dumps(l) for l in lines) + "\n")
    return script


def test_empty_script_empty_digests(tmp_path):
    script = tmp_path / "empty.ndjson"
    script.write_text("")
    result = run_script(script, seed=3)
    assert result["final_digest_per_device"] == {}
    assert result["summary"]["training_images"] == 0


def test_join_only_script_gives_empty_project_digest(tmp_path):
    script = tmp_path / "joins.ndjson"
    script.write_text(
        json.dumps({"at_ms": 0, "device": "d1", "directive": "join"})
        + "\n"
        + json.dumps({"at_ms": 1, "device": "d2", "directive": "join"})
        + "\n"
    )
    result = run_script(script, seed=3)
    digests = set(result["final_digest_per_device"].values())
    assert len(digests) == 1  # the empty project digest, everywhere


def test_fruit_salad_fixture_counts(tmp_path):
    script = write_fruit_fixture(tmp_path)
    result = run_script(script, seed=1)
    summary = result["summary"]
    assert summary["training_images"] == 70
    assert summary["testing_images"] == 0
    assert {k: v["training"] for k, v in summary["label_counts"].items()} == FRUIT_COUNTS
    assert len(set(result["final_digest_per_device"].values())) == 1


def test_script_determinism_two_runs(tmp_path):
    script = write_fruit_fixture(tmp_path)
    out1 = tmp_path / "run1"
    out2 = tmp_path / "run2"
    run_script(script, seed=9, out_dir=out1)
    run_script(script, seed=9, out_dir=out2)
    assert (out1 / "summary.json").read_bytes() == (out2 / "summary.json").read_bytes()
    assert (out1 / "telemetry.ndjson").read_bytes() == (out2 / "telemetry.ndjson").read_bytes()


def test_script_with_partition_and_cascade(tmp_path):
    rng = random.Random(5)
    img_dir = tmp_path / "imgs"
    img_dir.mkdir()
    for i in range(4):
        (img_dir / f"{i}.ppm").write_bytes(make_image(rng, 8, 8).to_ppm())
    lines = [
        {"at_ms": 0, "device": "d1", "directive": "join"},
        {"at_ms": 1, "device": "d2", "directive": "join"},
        {"at_ms": 2, "device": "d1", "directive": "capture", "dir": "imgs", "label": "keep", "split": "training"},
        {"at_ms": 3, "device": "d2", "directive": "disconnect"},
        {"at_ms": 4, "device": "d2", "directive": "capture", "dir": "imgs", "label": "axed", "split": "training"},
        {"at_ms": 5, "device": "d1", "directive": "capture", "dir": "imgs", "label": "axed", "split": "testing"},
        {"at_ms": 6, "device": "d1", "directive": "delete-label", "label": "axed"},
        {"at_ms": 7, "device": "d2", "directive": "reconnect"},
        {"at_ms": 8, "device": "d2", "directive": "delete-sample", "label": "keep", "index": 0},
    ]
    script = tmp_path / "cascade.ndjson"
    script.write_text("\n".join(json.dumps(l) for l in lines) + "\n")
    result = run_script(script, seed=2)
    summary = result["summary"]
    assert len(set(result["final_digest_per_device"].values())) == 1
    assert sorted(summary["label_counts"]) == ["axed", "keep"]
    assert summary["label_counts"]["keep"]["training"] == 3  # 4 captured, 1 deleted
    # d1's "axed" label was tombstoned with its 4 test samples; d2 had created
    # its OWN "axed" label while offline, so those 4 training captures survive
    assert summary["label_counts"]["axed"]["training"] == 4
    assert summary["training_images"] == 7 and summary["testing_images"] == 0


def test_camp_day_five_agents(tmp_path):
    """Scripted camp-day shape: 5 devices, collection, partitions, retrains."""
    rng = random.Random(17)
    for label in ("apple", "orange", "mango"):
        d = tmp_path / "images" / label
        d.mkdir(parents=True)
        base = {"apple": (210, 40, 40), "orange": (240, 140, 20), "mango": (250, 190, 60)}[label]
        for i in range(6):
            (d / f"{i}.ppm").write_bytes(make_image(rng, 10, 10, base=base).to_ppm())
    devices = [f"d{i}" for i in range(1, 6)]
    lines = [{"at_ms": i, "device": device, "directive": "join"} for i, device in enumerate(devices)]
    at = 100
    labels = ["apple", "orange", "mango"]
    for round_ in range(2):
        for i, device in enumerate(devices):
            label = labels[(i + round_) % 3]
            lines.append({"at_ms": at, "device": device, "directive": "capture", "dir": f"images/{label}", "label": label, "split": "training"})
            at += 10
    lines.append({"at_ms": at, "device": "d3", "directive": "disconnect"})
    lines.append({"at_ms": at + 5, "device": "d3", "directive": "capture", "dir": "images/apple", "label": "apple", "split": "testing"})
    lines.append({"at_ms": at + 10, "device": "d3", "directive": "reconnect"})
    at += 100
    retrain_plan = {"d1": 3, "d2": 1, "d4": 2}
    for device, count in retrain_plan.items():
        for _ in range(count):
            lines.append({"at_ms": at, "device": device, "directive": "retrain"})
            at += 10
    script = tmp_path / "camp.ndjson"
    script.write_text("\n".join(json.dumps(l) for l in lines) + "\n")
    result = run_script(script, seed=14, out_dir=tmp_path / "out")

    assert len(set(result["final_digest_per_device"].values())) == 1
    assert set(result["final_digest_per_device"]) == set(devices)
    assert result["summary"]["retrain_counts"] == retrain_plan

    from coml.telemetry import retrain_stats

    stats = retrain_stats({"camp": load_log(tmp_path / "out" / "telemetry.ndjson")})
    assert stats.per_team_total == {"camp": 6}
    assert sorted(stats.per_device_totals.values()) == [1, 2, 3]
    # 5 devices x 2 capture rounds x 6 images + 6 offline test captures
    assert result["summary"]["training_images"] == 60
    assert result["summary"]["testing_images"] == 6


def test_script_parse_errors():
    with pytest.raises(ScriptError):
        parse_script('{"at_ms": 0, "device": "d1", "directive": "dance"}')
    with pytest.raises(ScriptError):
        parse_script('{"at_ms": 5, "device": "d1", "directive": "join"}\n{"at_ms": 1, "device": "d1", "directive": "retrain"}')
    with pytest.raises(ScriptError):
        parse_script('{"at_ms": 0, "device": "d1", "directive": "retrain"}')  # used before join
    err = None
    try:
        parse_script("not json")
    except ScriptError as exc:
        err = exc
    assert err is not None and err.line == 1


# --- import_dir ---------------------------------------------------------------


@pytest.fixture
def live_agent(tmp_path):
    server = SyncServer(tmp_path / "srv").start()
    agent = Agent()
    agent.create_project(server.address, "imports")
    yield agent
    agent.close()
    server.stop()


def test_import_empty_dir(live_agent, tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    count, errors = import_dir(live_agent, empty, "stuff", Split.TRAINING)
    assert count == 0 and errors == []


def test_import_twenty_files(live_agent, tmp_path, rng):
    d = tmp_path / "imgs"
    d.mkdir()
    for i in range(20):
        (d / f"{i:02d}.ppm").write_bytes(make_image(rng, 6, 6).to_ppm())
    count, errors = import_dir(live_agent, d, "stuff", Split.TRAINING)
    assert count == 20 and errors == []
    live_agent.wait_synced()
    assert len(live_agent.view().live_samples()) == 20


def test_import_digests_match_file_hashes(live_agent, tmp_path, rng):
    d = tmp_path / "imgs"
    d.mkdir()
    expected = set()
    for i in range(8):
        data = make_image(rng, 5, 5).to_ppm()
        (d / f"{i}.ppm").write_bytes(data)
        expected.add(hashlib.sha256(data).hexdigest())
    import_dir(live_agent, d, "hashes", Split.TESTING)
    live_agent.wait_synced()
    digests = {s.blob for s in live_agent.view().live_samples()}
    assert digests == expected


def test_import_continue_on_error(live_agent, tmp_path, rng):
    d = tmp_path / "imgs"
    d.mkdir()
    (d / "00-bad.ppm").write_bytes(b"P6\n1 1\n255\nxx")
    (d / "01-good.ppm").write_bytes(make_image(rng, 4, 4).to_ppm())
    count, errors = import_dir(live_agent, d, "mixed", Split.TRAINING, continue_on_error=True)
    assert count == 1 and len(errors) == 1


# --- the coml binary ----------------------------------------------------------


def test_exit_code_connectivity():
    assert main(["new-project", "x", "--server", "127.0.0.1:1"]) == 3


def test_exit_code_script_error(tmp_path):
    bad = tmp_path / "bad.ndjson"
    bad.write_text("not json\n")
    assert main(["script", str(bad)]) == 2


def test_exit_code_data_error(tmp_path):
    missing = tmp_path / "missing.ndjson"
    assert main(["stats", str(missing)]) == 4


def test_cli_stats_and_timeline(tmp_path, capsys):
    script = write_fruit_fixture(tmp_path)
    out = tmp_path / "out"
    run_script(script, seed=4, out_dir=out)
    log = out / "telemetry.ndjson"
    assert main(["stats", str(log), "--json"]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["per_team_total"] == {"telemetry": 0}

    svg_path = tmp_path / "timeline.svg"
    assert main(["timeline-svg", str(log), "--out", str(svg_path)]) == 0
    capsys.readouterr()
    assert svg_path.read_text().startswith("<svg")

    assert main(["timeline-svg", str(log), "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert {row["device"] for row in doc["rows"]}  # one row per device
    total = sum(len(r["events"]) for r in doc["rows"])
    assert total == len(load_log(log))


def test_cli_script_and_game_flow(tmp_path, capsys, rng):
    # a full CLI pass: script -> train via script -> game on the trained model
    img_root = tmp_path / "gameimgs"
    img_root.mkdir()
    for i in range(6):
        (img_root / f"{i}.ppm").write_bytes(make_image(rng, 8, 8, base=(220, 30, 30)).to_ppm())
    script = write_fruit_fixture(tmp_path)
    lines = script.read_text().strip().split("\n")
    lines.append(json.dumps({"at_ms": 500, "device": "d1", "directive": "retrain"}))
    script.write_text("\n".join(lines) + "\n")
    out = tmp_path / "out"
    assert main(["script", str(script), "--seed", "6", "--out-dir", str(out), "--json"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["retrain_counts"] == {"d1": 1}

    model_file = out / "agents" / "d1" / "models" / "model-v1.json"
    assert model_file.exists()
    assert main(["game", "--model", str(model_file), "--images", str(img_root), "--seed", "2", "--json"]) == 0
    session = json.loads(capsys.readouterr().out)
    assert len(session["rounds"]) == 6
    assert 0.0 <= session["total_score"] <= 60.0


def test_serve_binary_end_to_end(tmp_path):
    """The real `coml serve` process: spawn, create a project, drive an agent."""
    env = {"PYTHONPATH": str(Path(__file__).resolve().parent.parent / "src")}
    import os

    env.update({k: v for k, v in os.environ.items() if k not in env})
    proc = subprocess.Popen(
        [sys.executable, "-m", "coml.cli", "serve", "--listen", "127.0.0.1:0", "--data-dir", str(tmp_path / "d")],
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        text=True,
        env=env,
    )
    try:
        line = proc.stdout.readline()
        assert line.startswith("serving on ")
        host_port = line.split()[2].rstrip(",")
        host, port = host_port.split(":")
        addr = (host, int(port))
        agent = Agent()
        agent.create_project(addr, "e2e")
        label = agent.add_label("thing")
        agent.capture(label, make_image(random.Random(1), 6, 6), Split.TRAINING)
        agent.wait_synced()
        assert len(agent.view().live_samples()) == 1
        agent.close()
    finally:
        proc.send_signal(signal.SIGTERM)
        proc.wait(timeout=10)


def test_env_var_overrides_data_dir(tmp_path, monkeypatch):
    env_dir = tmp_path / "from-env"
    monkeypatch.setenv("COML_DATA_DIR", str(env_dir))
    import subprocess as sp

    proc = sp.Popen(
        [sys.executable, "-m", "coml.cli", "serve", "--listen", "127.0.0.1:0", "--data-dir", str(tmp_path / "flag")],
        stdout=sp.PIPE,
        stderr=sp.STDOUT,
        text=True,
    )
    try:
        line = proc.stdout.readline()
        assert str(env_dir) in line  # env wins over the flag
    finally:
        proc.send_signal(signal.SIGTERM)
        proc.wait(timeout=10)
    assert env_dir.exists()
