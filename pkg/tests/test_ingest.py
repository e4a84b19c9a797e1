import hashlib
import socket
import threading

import pytest

from poststack.errors import EmptyMessage
from poststack.ingest import BlobStore, DirectoryWatcher, Ingestor
from poststack.smtpd import SmtpServer, SmtpSession


@pytest.fixture
def ingestor(tmp_path):
    return Ingestor(BlobStore(tmp_path / "blobs"))


def test_empty_message_rejected(ingestor):
    with pytest.raises(EmptyMessage):
        ingestor.ingest_bytes(b"", "api")


def test_email_id_is_sha256(ingestor):
    r = ingestor.ingest_bytes(b"abc", "api")
    # independent oracle: hashlib over the same bytes
    assert r.email_id == hashlib.sha256(b"abc").hexdigest()
    assert r.email_id.startswith("ba7816bf")
    assert r.raw_size == 3


def test_duplicate_by_content_hash(ingestor):
    raw = b"From: a@b.test\r\n\r\nhi"
    first = ingestor.ingest_bytes(raw, "api")
    second = ingestor.ingest_bytes(raw, "api")
    assert not first.duplicate
    assert second.duplicate
    assert first.email_id == second.email_id


def test_duplicate_emits_no_event(tmp_path):
    events = []
    ing = Ingestor(BlobStore(tmp_path / "b"), on_stored=events.append)
    ing.ingest_bytes(b"x", "api")
    ing.ingest_bytes(b"x", "api")
    assert len(events) == 1


def test_blob_written_once(tmp_path):
    blobs = BlobStore(tmp_path / "b")
    ing = Ingestor(blobs)
    r = ing.ingest_bytes(b"hello", "directory")
    path = blobs.path_for(r.email_id)
    assert path.read_bytes() == b"hello"
    assert len(list(blobs.blob_dir.iterdir())) == 1


def test_concurrent_ingest_single_blob(tmp_path):
    events = []
    ing = Ingestor(BlobStore(tmp_path / "b"), on_stored=events.append)
    threads = [
        threading.Thread(target=ing.ingest_bytes, args=(b"same content", "api"))
        for _ in range(16)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(events) == 1
    assert len(list(ing.blobs.blob_dir.iterdir())) == 1


def test_receipts_totally_ordered(ingestor):
    receipts = [ingestor.ingest_bytes(f"msg {i}".encode(), "api") for i in range(20)]
    stamps = [r.received_at for r in receipts]
    assert stamps == sorted(stamps)
    assert len(set(stamps)) == len(stamps)


# ---------------------------------------------------------------------------
# directory watcher

def test_watcher_ingests_existing_files(tmp_path, ingestor):
    d = tmp_path / "drop"
    d.mkdir()
    for i in range(3):
        (d / f"m{i}.eml").write_bytes(f"Subject: {i}\r\n\r\nbody {i}".encode())
    w = DirectoryWatcher(d, ingestor)
    receipts = w.scan_once()
    assert len(receipts) == 3
    assert not any(r.duplicate for r in receipts)


def test_watcher_dedupes_copied_file(tmp_path, ingestor):
    d = tmp_path / "drop"
    d.mkdir()
    (d / "a.eml").write_bytes(b"same bytes")
    w = DirectoryWatcher(d, ingestor)
    w.scan_once()
    (d / "b.eml").write_bytes(b"same bytes")
    receipts = w.scan_once()
    assert len(receipts) == 1
    assert receipts[0].duplicate


def test_watcher_ignores_non_eml(tmp_path, ingestor):
    d = tmp_path / "drop"
    d.mkdir()
    (d / "notes.txt").write_bytes(b"nope")
    w = DirectoryWatcher(d, ingestor)
    assert w.scan_once() == []


def test_watcher_does_not_reingest_unchanged(tmp_path, ingestor):
    d = tmp_path / "drop"
    d.mkdir()
    (d / "a.eml").write_bytes(b"stuff")
    w = DirectoryWatcher(d, ingestor)
    assert len(w.scan_once()) == 1
    assert w.scan_once() == []


# ---------------------------------------------------------------------------
# SMTP session state machine

def session(ingestor):
    return SmtpSession(ingestor)


def test_smtp_happy_path_reply_codes(ingestor):
    s = session(ingestor)
    # reply codes per the RFC 5321 table
    assert s.handle_line(b"HELO client.test\r\n").startswith(b"250")
    assert s.handle_line(b"MAIL FROM:<a@x.test>\r\n").startswith(b"250")
    assert s.handle_line(b"RCPT TO:<b@y.test>\r\n").startswith(b"250")
    assert s.handle_line(b"DATA\r\n").startswith(b"354")
    assert s.handle_line(b"Subject: t\r\n") == b""
    assert s.handle_line(b"\r\n") == b""
    assert s.handle_line(b"hello\r\n") == b""
    assert s.handle_line(b".\r\n").startswith(b"250")
    assert len(s.receipts) == 1
    assert s.receipts[0].envelope_from == "a@x.test"
    assert s.receipts[0].envelope_to == ["b@y.test"]
    assert s.handle_line(b"QUIT\r\n").startswith(b"221")
    assert s.closed


def test_smtp_data_before_rcpt_503(ingestor):
    s = session(ingestor)
    s.handle_line(b"HELO x\r\n")
    assert s.handle_line(b"DATA\r\n").startswith(b"503")


def test_smtp_rcpt_before_mail_503(ingestor):
    s = session(ingestor)
    s.handle_line(b"HELO x\r\n")
    assert s.handle_line(b"RCPT TO:<b@y.test>\r\n").startswith(b"503")


def test_smtp_dot_unstuffing(ingestor):
    s = session(ingestor)
    s.handle_line(b"HELO x\r\n")
    s.handle_line(b"MAIL FROM:<a@x.test>\r\n")
    s.handle_line(b"RCPT TO:<b@y.test>\r\n")
    s.handle_line(b"DATA\r\n")
    s.handle_line(b"..hello\r\n")
    s.handle_line(b".\r\n")
    raw = s.ingestor.blobs.read(s.receipts[0].email_id)
    assert raw == b".hello"


def test_smtp_unknown_command_500(ingestor):
    s = session(ingestor)
    assert s.handle_line(b"FROB x\r\n").startswith(b"500")


def test_smtp_rset_clears_envelope(ingestor):
    s = session(ingestor)
    s.handle_line(b"HELO x\r\n")
    s.handle_line(b"MAIL FROM:<a@x.test>\r\n")
    assert s.handle_line(b"RSET\r\n").startswith(b"250")
    assert s.handle_line(b"RCPT TO:<b@y.test>\r\n").startswith(b"503")


def test_smtp_fuzz_never_stores_without_full_cycle(ingestor):
    import random

    rng = random.Random(7)
    verbs = [b"HELO x", b"MAIL FROM:<a@x.test>", b"RCPT TO:<b@y.test>", b"DATA",
             b"RSET", b"NOOP", b"junk \xff\xfe", b".", b"body line", b"QUIT"]
    for _ in range(200):
        s = session(ingestor)
        completed = 0
        for _ in range(30):
            if s.closed:
                break
            line = rng.choice(verbs) + b"\r\n"
            before = len(s.receipts)
            s.handle_line(line)
            completed += len(s.receipts) - before
        assert len(s.receipts) == completed


def test_smtp_over_socket(tmp_path):
    ing = Ingestor(BlobStore(tmp_path / "b"))
    server = SmtpServer(ing, port=0)
    server.start()
    try:
        with socket.create_connection(("127.0.0.1", server.port), timeout=5) as sock:
            f = sock.makefile("rwb")

            def cmd(line):
                f.write(line + b"\r\n")
                f.flush()
                return f.readline()

            assert f.readline().startswith(b"220 post-stack")
            assert cmd(b"EHLO t").startswith(b"250")
            assert cmd(b"MAIL FROM:<a@x.test>").startswith(b"250")
            assert cmd(b"RCPT TO:<b@y.test>").startswith(b"250")
            assert cmd(b"DATA").startswith(b"354")
            f.write(b"Subject: s\r\n\r\nbody\r\n")
            assert cmd(b".").startswith(b"250")
            assert cmd(b"QUIT").startswith(b"221")
    finally:
        server.stop()
    assert ing.blobs.exists(hashlib.sha256(b"Subject: s\r\n\r\nbody").hexdigest())
