"""Email ingestion: content-addressed blob storage, dedupe and the
directory watcher.

Every raw message is stored exactly once under blobs/<sha256>.eml; the
hash doubles as the email id for the rest of the system. Storing a new
blob emits an EmailStored callback so the pipeline can pick it up.
"""

from __future__ import annotations

import hashlib
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Optional

from .errors import EmptyMessage, StorageFailure

logger = logging.getLogger(__name__)

SOURCES = ("smtp", "directory", "api")


def utc_now_rfc3339() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


@dataclass
class IngestReceipt:
    email_id: str
    source: str
    received_at: str
    duplicate: bool
    raw_size: int
    envelope_from: Optional[str] = None
    envelope_to: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "email_id": self.email_id,
            "source": self.source,
            "received_at": self.received_at,
            "duplicate": self.duplicate,
            "raw_size": self.raw_size,
            "envelope_from": self.envelope_from,
            "envelope_to": list(self.envelope_to),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IngestReceipt":
        return cls(
            email_id=d["email_id"],
            source=d["source"],
            received_at=d["received_at"],
            duplicate=d["duplicate"],
            raw_size=d["raw_size"],
            envelope_from=d.get("envelope_from"),
            envelope_to=list(d.get("envelope_to") or []),
        )


class BlobStore:
    """Content-addressed .eml blob storage with atomic dedupe.

    The check-and-store is serialized per process by a lock; the write
    itself goes through a temp file + rename so a crash never leaves a
    partial blob under its final name.
    """

    def __init__(self, blob_dir: str | os.PathLike):
        self.blob_dir = Path(blob_dir)
        self.blob_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def path_for(self, email_id: str) -> Path:
        return self.blob_dir / f"{email_id}.eml"

    def exists(self, email_id: str) -> bool:
        return self.path_for(email_id).exists()

    def read(self, email_id: str) -> bytes:
        return self.path_for(email_id).read_bytes()

    def store(self, raw: bytes) -> tuple[str, bool]:
        """Store raw bytes; returns (email_id, was_duplicate)."""
        email_id = hashlib.sha256(raw).hexdigest()
        final = self.path_for(email_id)
        with self._lock:
            if final.exists():
                return email_id, True
            tmp = final.with_suffix(".tmp")
            try:
                with open(tmp, "wb") as fh:
                    fh.write(raw)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, final)
            except OSError as exc:
                tmp.unlink(missing_ok=True)
                raise StorageFailure(f"blob write failed: {exc}") from exc
        return email_id, False


class Ingestor:
    """Front door for all three ingestion sources."""

    def __init__(
        self,
        blobs: BlobStore,
        on_stored: Optional[Callable[[IngestReceipt], None]] = None,
    ):
        self.blobs = blobs
        self.on_stored = on_stored
        self._seq_lock = threading.Lock()
        self._last_ts = ""

    def _next_timestamp(self) -> str:
        # receipts must be totally ordered within one process run
        with self._seq_lock:
            ts = utc_now_rfc3339()
            while ts <= self._last_ts:
                time.sleep(0.000001)
                ts = utc_now_rfc3339()
            self._last_ts = ts
            return ts

    def ingest_bytes(
        self,
        raw: bytes,
        source: str,
        envelope_from: Optional[str] = None,
        envelope_to: Optional[Iterable[str]] = None,
    ) -> IngestReceipt:
        if not raw:
            raise EmptyMessage("refusing to ingest zero-byte message")
        if source not in SOURCES:
            raise ValueError(f"unknown ingest source {source!r}")
        email_id, duplicate = self.blobs.store(raw)
        receipt = IngestReceipt(
            email_id=email_id,
            source=source,
            received_at=self._next_timestamp(),
            duplicate=duplicate,
            raw_size=len(raw),
            envelope_from=envelope_from,
            envelope_to=list(envelope_to or []),
        )
        if not duplicate and self.on_stored is not None:
            self.on_stored(receipt)
        return receipt


class DirectoryWatcher:
    """Polls a directory for *.eml files and ingests each one once.

    Files are tracked by (path, size, mtime) so an unchanged file is not
    re-read every poll; content-hash dedupe still catches the same bytes
    arriving under a new name.
    """

    def __init__(
        self,
        path: str | os.PathLike,
        ingestor: Ingestor,
        interval_s: float = 2.0,
    ):
        self.path = Path(path)
        self.ingestor = ingestor
        self.interval_s = interval_s
        self._seen: set[tuple[str, int, float]] = set()
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self.receipts: list[IngestReceipt] = []

    def scan_once(self) -> list[IngestReceipt]:
        out: list[IngestReceipt] = []
        if not self.path.is_dir():
            return out
        for entry in sorted(self.path.glob("*.eml")):
            try:
                st = entry.stat()
            except OSError:
                continue
            key = (str(entry), st.st_size, st.st_mtime)
            if key in self._seen:
                continue
            self._seen.add(key)
            try:
                raw = entry.read_bytes()
            except OSError as exc:
                logger.warning("IngestSkipped: unreadable %s: %s", entry, exc)
                continue
            if not raw:
                logger.warning("IngestSkipped: empty file %s", entry)
                continue
            receipt = self.ingestor.ingest_bytes(raw, "directory")
            out.append(receipt)
        self.receipts.extend(out)
        return out

    def start(self) -> None:
        def run():
            while not self._stop.is_set():
                self.scan_once()
                self._stop.wait(self.interval_s)

        self._thread = threading.Thread(target=run, daemon=True, name="dir-watcher")
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
