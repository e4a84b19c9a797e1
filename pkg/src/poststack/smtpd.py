"""Minimal SMTP listener feeding the ingestor.

Implements the command subset HELO/EHLO, MAIL FROM, RCPT TO, DATA, RSET,
NOOP, QUIT. No AUTH, no STARTTLS, no pipelining. Message bytes between
the 354 response and the lone "." terminator are dot-unstuffed and
handed to Ingestor.ingest_bytes with the envelope recorded alongside.
"""

from __future__ import annotations

import logging
import re
import socket
import socketserver
import threading
from typing import Optional

from .ingest import IngestReceipt, Ingestor

logger = logging.getLogger(__name__)

GREETING = b"220 post-stack ESMTP\r\n"
MAX_LINE = 4096

_ADDR_RE = re.compile(r"<([^<>]*)>")


def _parse_path(arg: str) -> Optional[str]:
    """Extract the address from MAIL FROM:<...> / RCPT TO:<...> syntax."""
    m = _ADDR_RE.search(arg)
    if m is not None:
        return m.group(1)
    arg = arg.strip()
    return arg if arg else None


class SmtpSession:
    """State machine for one connection; transport-agnostic for tests."""

    def __init__(self, ingestor: Ingestor, max_size: int = 25 * 1024 * 1024):
        self.ingestor = ingestor
        self.max_size = max_size
        self.helo: Optional[str] = None
        self.mail_from: Optional[str] = None
        self.rcpt_to: list[str] = []
        self.in_data = False
        self.data_lines: list[bytes] = []
        self.data_size = 0
        self.oversize = False
        self.closed = False
        self.receipts: list[IngestReceipt] = []

    def _reset_envelope(self) -> None:
        self.mail_from = None
        self.rcpt_to = []
        self.in_data = False
        self.data_lines = []
        self.data_size = 0
        self.oversize = False

    def handle_line(self, line: bytes) -> bytes:
        """Process one CRLF-terminated line, return the reply bytes
        (empty while accumulating DATA)."""
        if self.in_data:
            return self._handle_data_line(line)
        try:
            text = line.decode("utf-8", "replace").rstrip("\r\n")
        except Exception:
            return b"500 unrecognized command\r\n"
        verb, _, arg = text.partition(" ")
        verb = verb.upper()
        if verb in ("HELO", "EHLO"):
            self.helo = arg.strip() or "unknown"
            self._reset_envelope()
            return b"250 post-stack greets you\r\n"
        if verb == "MAIL":
            if self.mail_from is not None:
                return b"503 nested MAIL command\r\n"
            addr = _parse_path(arg.partition(":")[2])
            if addr is None:
                return b"501 syntax: MAIL FROM:<address>\r\n"
            self.mail_from = addr
            return b"250 OK\r\n"
        if verb == "RCPT":
            if self.mail_from is None:
                return b"503 need MAIL before RCPT\r\n"
            addr = _parse_path(arg.partition(":")[2])
            if not addr:
                return b"501 syntax: RCPT TO:<address>\r\n"
            self.rcpt_to.append(addr)
            return b"250 OK\r\n"
        if verb == "DATA":
            if not self.rcpt_to:
                return b"503 need RCPT before DATA\r\n"
            self.in_data = True
            self.data_lines = []
            self.data_size = 0
            self.oversize = False
            return b"354 end data with <CRLF>.<CRLF>\r\n"
        if verb == "RSET":
            self._reset_envelope()
            return b"250 OK\r\n"
        if verb == "NOOP":
            return b"250 OK\r\n"
        if verb == "QUIT":
            self.closed = True
            return b"221 bye\r\n"
        return b"500 unrecognized command\r\n"

    def _handle_data_line(self, line: bytes) -> bytes:
        stripped = line.rstrip(b"\r\n")
        if stripped == b".":
            self.in_data = False
            if self.oversize:
                self._reset_envelope()
                return b"552 message size exceeds limit\r\n"
            raw = b"\r\n".join(self.data_lines)
            envelope_from = self.mail_from
            rcpts = list(self.rcpt_to)
            self._reset_envelope()
            if not raw:
                return b"554 empty message refused\r\n"
            try:
                receipt = self.ingestor.ingest_bytes(
                    raw, "smtp", envelope_from=envelope_from, envelope_to=rcpts
                )
            except Exception as exc:
                logger.error("smtp ingest failed: %s", exc)
                return b"451 local error in processing\r\n"
            self.receipts.append(receipt)
            return b"250 OK: queued as " + receipt.email_id[:12].encode() + b"\r\n"
        # dot-stuffing: a leading "." was doubled by the client
        if stripped.startswith(b".."):
            stripped = stripped[1:]
        self.data_size += len(stripped) + 2
        if self.data_size > self.max_size:
            self.oversize = True
            self.data_lines = []
        else:
            self.data_lines.append(stripped)
        return b""


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        session = SmtpSession(self.server.ingestor, self.server.max_size)  # type: ignore[attr-defined]
        try:
            self.wfile.write(GREETING)
            while not session.closed:
                line = self.rfile.readline(MAX_LINE)
                if not line:
                    break  # client went away; in-flight message dropped
                reply = session.handle_line(line)
                if reply:
                    self.wfile.write(reply)
        except (ConnectionError, socket.timeout, OSError):
            pass


class SmtpServer:
    """Threaded SMTP listener; one session thread per connection."""

    def __init__(
        self,
        ingestor: Ingestor,
        host: str = "127.0.0.1",
        port: int = 2525,
        max_size: int = 25 * 1024 * 1024,
    ):
        class _Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = _Server((host, port), _Handler)
        self._server.ingestor = ingestor  # type: ignore[attr-defined]
        self._server.max_size = max_size  # type: ignore[attr-defined]
        self._thread: Optional[threading.Thread] = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def start(self) -> None:
        self._thread = threading.Thread(
            target=self._server.serve_forever, daemon=True, name="smtp-listener"
        )
        self._thread.start()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
