import threading
import time

import pytest

from coml.client import SyncConnection
from coml.domain import Split, canonical_digest
from coml.errors import AuthFailure, MalformedImage, MissingBlob, UnknownDigest, UnknownProject
from coml.ids import IdSource
from coml.image import solid_color
from coml.replication import Replica
from coml.server import SyncServer

DEV = IdSource(5150)


@pytest.fixture
def server(tmp_path):
    srv = SyncServer(tmp_path / "data").start()
    yield srv
    srv.stop()


def _join(server, project_id, token, seed=None):
    """A replica wired to a live connection; returns (replica, conn)."""
    ids = IdSource(seed) if seed is not None else None
    replica = Replica(project_id, DEV.new_id(), ids)
    lock = threading.Lock()

    def on_ops(ops):
        with lock:
            replica.receive_all(ops)

    conn = SyncConnection(server.address, on_ops=on_ops)
    conn.hello(project_id, token, replica.device_id, replica.project.applied_seq)
    return replica, conn


def _wait(predicate, timeout=5.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(0.005)
    return False


def test_create_project_empty_and_distinct(server):
    p1, t1 = server.create_project("one")
    p2, t2 = server.create_project("two")
    assert p1 != p2 and t1 != t2
    replica, conn = _join(server, p1, t1)
    assert replica.project.applied_seq == 0  # delta_since(0) was empty
    conn.close()


def test_join_with_token_sees_same_project(server):
    project_id, token = server.create_project("shared")
    a, conn_a = _join(server, project_id, token)
    b, conn_b = _join(server, project_id, token)
    op = a.submit_add_label("apple")
    conn_a.submit_op(project_id, token, op)
    assert _wait(lambda: b.project.applied_seq == 1)
    assert canonical_digest(a.project) == canonical_digest(b.project)
    conn_a.close()
    conn_b.close()


def test_duplicate_submit_same_seq(server):
    project_id, token = server.create_project("p")
    replica, conn = _join(server, project_id, token)
    op = replica.submit_add_label("apple")
    conn.submit_op(project_id, token, op)
    first_seq = replica.op_log[0].seq
    conn.submit_op(project_id, token, op)  # client retry
    time.sleep(0.05)
    assert replica.project.applied_seq == 1
    assert replica.op_log[0].seq == first_seq == 1
    conn.close()


def test_concurrent_submissions_form_permutation(server):
    project_id, token = server.create_project("p")
    replicas = []
    conns = []
    for i in range(3):
        replica, conn = _join(server, project_id, token)
        replicas.append(replica)
        conns.append(conn)
    ops = [r.submit_add_label(f"label-{i}") for i, r in enumerate(replicas)]
    threads = [
        threading.Thread(target=conns[i].submit_op, args=(project_id, token, ops[i]))
        for i in range(3)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for replica in replicas:
        assert _wait(lambda: replica.project.applied_seq == 3)
    seqs = sorted(op.seq for op in replicas[0].op_log)
    assert seqs == [1, 2, 3]
    digests = {canonical_digest(r.project) for r in replicas}
    assert len(digests) == 1
    for conn in conns:
        conn.close()


def test_blob_roundtrip_and_idempotent_put(server, tmp_path):
    project_id, token = server.create_project("p")
    conn = SyncConnection(server.address)
    image = solid_color(4, 4, (9, 8, 7))
    d1 = conn.put_blob(project_id, token, image.to_ppm())
    d2 = conn.put_blob(project_id, token, image.to_ppm())
    assert d1 == d2 == image.digest
    blob_files = list((tmp_path / "data" / "projects" / project_id / "blobs").iterdir())
    assert len(blob_files) == 1  # single stored copy
    assert conn.get_blob(project_id, token, d1) == image.to_ppm()
    conn.close()


def test_foreign_token_rejected(server):
    p1, t1 = server.create_project("one")
    p2, t2 = server.create_project("two")
    conn = SyncConnection(server.address)
    image = solid_color(2, 2, (1, 1, 1))
    digest = conn.put_blob(p1, t1, image.to_ppm())
    with pytest.raises(AuthFailure):
        conn.get_blob(p1, t2, digest)  # wrong project's token
    with pytest.raises(UnknownDigest):
        conn.get_blob(p2, t2, digest)  # blobs do not cross projects
    with pytest.raises(AuthFailure):
        conn.put_blob(p1, t2, image.to_ppm())
    with pytest.raises(UnknownProject):
        conn.put_blob("00000000-0000-4000-8000-00000000dead", t1, image.to_ppm())
    conn.close()


def test_add_sample_requires_uploaded_blob(server):
    project_id, token = server.create_project("p")
    replica, conn = _join(server, project_id, token)
    label_op = replica.submit_add_label("x")
    conn.submit_op(project_id, token, label_op)
    sample_op = replica.submit_add_sample(label_op.kind.label_id, "9" * 64, Split.TRAINING)
    with pytest.raises(MissingBlob):
        conn.submit_op(project_id, token, sample_op)
    conn.close()


def test_malformed_blob_rejected(server):
    project_id, token = server.create_project("p")
    conn = SyncConnection(server.address)
    with pytest.raises(MalformedImage):
        conn.put_blob(project_id, token, b"P6\n1 1\n255\nXXXX")
    conn.close()


def test_crash_recovery_preserves_acked_ops(tmp_path):
    data_dir = tmp_path / "crashdata"
    server = SyncServer(data_dir).start()
    project_id, token = server.create_project("p")
    replica, conn = _join(server, project_id, token)
    for i in range(5):
        conn.submit_op(project_id, token, replica.submit_add_label(f"label-{i}"))
    conn.close()
    server.stop()  # abandon in-memory state; durability rests on the fsync'd WAL

    revived = SyncServer(data_dir).start()
    fresh, conn2 = _join(revived, project_id, token)
    assert _wait(lambda: fresh.project.applied_seq == 5)
    assert canonical_digest(fresh.project) == canonical_digest(replica.project)
    conn2.close()
    revived.stop()


def test_torn_tail_frame_discarded(tmp_path):
    data_dir = tmp_path / "torn"
    server = SyncServer(data_dir).start()
    project_id, token = server.create_project("p")
    replica, conn = _join(server, project_id, token)
    conn.submit_op(project_id, token, replica.submit_add_label("kept"))
    conn.close()
    server.stop()
    log_path = data_dir / "projects" / project_id / "ops.log"
    with open(log_path, "ab") as f:
        f.write(b"\x00\x00\x01\x00partial")  # announced 256 bytes, wrote 7
    revived = SyncServer(data_dir).start()
    store = revived._projects[project_id]
    assert store.applied_seq() == 1
    revived.stop()


def test_project_create_over_wire(server):
    conn = SyncConnection(server.address)
    project_id, token = conn.create_project("wire")
    replica, conn2 = _join(server, project_id, token)
    assert replica.project.applied_seq == 0
    conn.close()
    conn2.close()
