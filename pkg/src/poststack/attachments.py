"""Per-attachment analysis: type identification, QR extraction,
script-obfuscation scoring, rule matching, optional sandbox submission.

ZIP and PDF payloads are identified but not recursed into; deep file
analysis is the sandbox backend's job.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import time
from dataclasses import dataclass, field
from typing import Optional

from .emlparse import AttachmentRef, Link, normalize_url
from .errors import HashMismatch
from .flags import Flag, attachment_target
from .intel import Blocklist, check_url
from .qr import scan_and_decode
from .rules import Ruleset, match_rules

logger = logging.getLogger(__name__)

DANGEROUS_CALLS = ("eval", "unescape", "fromCharCode", "atob", "document.write", "Function")

IMAGE_TYPES = ("png", "jpeg")

_SCRIPT_BLOCK_RE = re.compile(r"<script\b[^>]*>(.*?)</script\s*>", re.IGNORECASE | re.DOTALL)
_STRING_LITERAL_RE = re.compile(r"'[^'\n]*'|\"[^\"\n]*\"|`[^`]*`", re.DOTALL)
_HEX_ESCAPE_RE = re.compile(r"\\x[0-9A-Fa-f]{2}|%[0-9A-Fa-f]{2}")
_SCRIPTISH_RE = re.compile(r"function\b|var |=>")


@dataclass
class ObfuscationReport:
    entropy_string_literals: float  # bits per character
    longest_string: int
    dangerous_call_density: float  # calls per KiB
    hex_escape_ratio: float
    score: float

    def to_dict(self) -> dict:
        return {
            "entropy_string_literals": self.entropy_string_literals,
            "longest_string": self.longest_string,
            "dangerous_call_density": self.dangerous_call_density,
            "hex_escape_ratio": self.hex_escape_ratio,
            "score": self.score,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObfuscationReport":
        return cls(
            d["entropy_string_literals"],
            d["longest_string"],
            d["dangerous_call_density"],
            d["hex_escape_ratio"],
            d["score"],
        )


@dataclass
class SandboxVerdict:
    submitted: bool
    backend: str
    verdict: str  # clean | suspicious | malicious | error | skipped
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "submitted": self.submitted,
            "backend": self.backend,
            "verdict": self.verdict,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SandboxVerdict":
        return cls(d["submitted"], d["backend"], d["verdict"], d.get("detail", ""))


@dataclass
class AttachmentAnalysis:
    sha256: str
    detected_type: str
    flags: list = field(default_factory=list)
    qr_payloads: list = field(default_factory=list)
    qr_links: list = field(default_factory=list)  # Links fed back to the email
    obfuscation: Optional[ObfuscationReport] = None
    sandbox: Optional[SandboxVerdict] = None

    def to_dict(self) -> dict:
        return {
            "sha256": self.sha256,
            "detected_type": self.detected_type,
            "flags": [f.to_dict() for f in self.flags],
            "qr_payloads": list(self.qr_payloads),
            "qr_links": [l.to_dict() for l in self.qr_links],
            "obfuscation": self.obfuscation.to_dict() if self.obfuscation else None,
            "sandbox": self.sandbox.to_dict() if self.sandbox else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttachmentAnalysis":
        return cls(
            sha256=d["sha256"],
            detected_type=d["detected_type"],
            flags=[Flag.from_dict(f) for f in d.get("flags", [])],
            qr_payloads=list(d.get("qr_payloads", [])),
            qr_links=[Link.from_dict(l) for l in d.get("qr_links", [])],
            obfuscation=ObfuscationReport.from_dict(d["obfuscation"]) if d.get("obfuscation") else None,
            sandbox=SandboxVerdict.from_dict(d["sandbox"]) if d.get("sandbox") else None,
        )


# ---------------------------------------------------------------------------
# type identification


def identify_type(payload: bytes) -> str:
    """Detect the content type from magic bytes / content, never from the
    filename."""
    if payload.startswith(b"\x89PNG"):
        return "png"
    if payload.startswith(b"\xff\xd8\xff"):
        return "jpeg"
    if payload.startswith(b"%PDF"):
        return "pdf"
    if payload.startswith(b"PK\x03\x04"):
        return "zip"
    try:
        text = payload.decode("utf-8")
    except UnicodeDecodeError:
        return "unknown"
    lower = text.lower()
    if "<html" in lower or "<script" in lower:
        return "html"
    call_hits = sum(1 for c in DANGEROUS_CALLS if c in text)
    scriptish = len(_SCRIPTISH_RE.findall(text))
    if call_hits >= 3 or (text and scriptish / len(text) > 1 / 200):
        return "script_text"
    return "plain_text"


# ---------------------------------------------------------------------------
# obfuscation scoring


def _shannon_entropy(chars: str) -> float:
    if not chars:
        return 0.0
    counts: dict = {}
    for ch in chars:
        counts[ch] = counts.get(ch, 0) + 1
    n = len(chars)
    return -sum((c / n) * math.log2(c / n) for c in counts.values())


def score_obfuscation(text: str) -> ObfuscationReport:
    """Weighted obfuscation score over string-literal entropy, dangerous-call
    density, hex-escape ratio and longest literal length."""
    if not text:
        return ObfuscationReport(0.0, 0, 0.0, 0.0, 0.0)

    literals = _STRING_LITERAL_RE.findall(text)
    # literal contents, quotes stripped
    contents = [lit[1:-1] for lit in literals]
    all_chars = "".join(contents)
    entropy = _shannon_entropy(all_chars)
    longest = max((len(c) for c in contents), default=0)

    calls = sum(text.count(c) for c in DANGEROUS_CALLS)
    density = calls / (len(text) / 1024)

    escaped = sum(len(m.group(0)) for m in _HEX_ESCAPE_RE.finditer(all_chars))
    hex_ratio = escaped / len(all_chars) if all_chars else 0.0

    norm_entropy = min(entropy / 6, 1.0)
    norm_density = min(density / 5, 1.0)
    norm_longest = min(longest / 1024, 1.0)
    score = 0.35 * norm_entropy + 0.25 * norm_density + 0.25 * hex_ratio + 0.15 * norm_longest
    score = min(1.0, max(0.0, score))
    return ObfuscationReport(entropy, longest, density, hex_ratio, score)


def _script_source(text: str, detected_type: str) -> str:
    """For HTML, score only the <script> block bodies; scripts score whole."""
    if detected_type != "html":
        return text
    return "\n".join(m.group(1) for m in _SCRIPT_BLOCK_RE.finditer(text))


# ---------------------------------------------------------------------------
# sandbox client


class SandboxClient:
    """Minimal submit/poll file-triage client.

    The wire contract is deliberately generic: POST the file, poll the
    result endpoint until it reports clean/suspicious/malicious. A
    "local-mock" backend answers from a sha256 -> verdict fixture table so
    tests never need a network.
    """

    _FINAL = ("clean", "suspicious", "malicious")

    def __init__(self, config, session=None):
        self.config = config
        self._session = session
        self._fixture: Optional[dict] = None

    def _load_fixture(self) -> dict:
        if self._fixture is None:
            try:
                with open(self.config.fixture_path, "r", encoding="utf-8") as fh:
                    self._fixture = json.load(fh)
            except (OSError, ValueError) as exc:
                logger.warning("sandbox fixture unreadable: %s", exc)
                self._fixture = {}
        return self._fixture

    def submit(self, payload: bytes, filename: str) -> SandboxVerdict:
        if not self.config.enabled:
            return SandboxVerdict(False, self.config.backend, "skipped", "sandbox disabled")
        if self.config.backend == "local-mock":
            sha = hashlib.sha256(payload).hexdigest()
            verdict = self._load_fixture().get(sha, "clean")
            if verdict not in self._FINAL:
                return SandboxVerdict(True, "local-mock", "error", f"fixture verdict {verdict!r} invalid")
            return SandboxVerdict(True, "local-mock", verdict, f"fixture entry for {sha[:12]}")
        return self._submit_http(payload, filename)

    def _submit_http(self, payload: bytes, filename: str) -> SandboxVerdict:
        import requests

        session = self._session or requests
        backend = self.config.backend
        try:
            resp = session.post(
                self.config.base_url + self.config.submit_path,
                files={"file": (filename, payload)},
                timeout=self.config.timeout_s,
            )
            resp.raise_for_status()
            job_id = resp.json()["id"]
        except Exception as exc:
            logger.warning("sandbox submit failed: %s", exc)
            return SandboxVerdict(False, backend, "error", f"submit failed: {exc}")

        deadline = time.monotonic() + self.config.timeout_s
        while time.monotonic() < deadline:
            try:
                resp = session.get(
                    f"{self.config.base_url}{self.config.result_path}/{job_id}",
                    timeout=self.config.timeout_s,
                )
                resp.raise_for_status()
                verdict = resp.json().get("verdict", "")
            except Exception as exc:
                logger.warning("sandbox poll failed: %s", exc)
                return SandboxVerdict(True, backend, "error", f"poll failed: {exc}")
            if verdict in self._FINAL:
                return SandboxVerdict(True, backend, verdict, f"job {job_id}")
            time.sleep(self.config.poll_interval_s)
        return SandboxVerdict(True, backend, "error", f"job {job_id} timed out")


# ---------------------------------------------------------------------------
# dispatch


def analyze_attachment(
    att: AttachmentRef,
    payload: bytes,
    rules: Optional[Ruleset] = None,
    intel: Optional[Blocklist] = None,
    sandbox: Optional[SandboxClient] = None,
) -> AttachmentAnalysis:
    actual = hashlib.sha256(payload).hexdigest()
    if actual != att.sha256:
        exc = HashMismatch(
            f"attachment {att.index}: stored hash {att.sha256[:16]}... "
            f"but payload hashes to {actual[:16]}..."
        )
        exc.integrity_flag = Flag(
            source="attachments",
            severity=90,
            reason="payload_hash_mismatch",
            evidence=exc.message,
            target=attachment_target(att.index),
        )
        raise exc

    detected = identify_type(payload)
    analysis = AttachmentAnalysis(sha256=att.sha256, detected_type=detected)

    if detected in IMAGE_TYPES:
        payloads, warnings = scan_and_decode(payload)
        for warning in warnings:
            logger.info("qr scan warning (%s): %s", att.sha256[:12], warning)
        for qp in payloads:
            analysis.qr_payloads.append(qp.text)
            norm = normalize_url(qp.text)
            if norm is None:
                continue
            url, scheme, host = norm
            link = Link(url=url, scheme=scheme, host=host, origin="qr_code")
            analysis.qr_links.append(link)
            if intel is not None:
                hit = check_url(link, intel)
                if hit is not None:
                    analysis.flags.append(
                        Flag(
                            source="intel",
                            severity=hit.severity,
                            reason=hit.reason,
                            evidence=f"qr-decoded {hit.evidence}",
                            target=attachment_target(att.index),
                        )
                    )

    if detected in ("html", "script_text"):
        source = _script_source(payload.decode("utf-8", "replace"), detected)
        report = score_obfuscation(source)
        analysis.obfuscation = report
        if report.score >= 0.5:
            analysis.flags.append(
                Flag(
                    source="attachments",
                    severity=round(40 + 40 * report.score),
                    reason="obfuscated_script",
                    evidence=(
                        f"obfuscation score {report.score:.2f}: "
                        f"entropy {report.entropy_string_literals:.2f} b/ch, "
                        f"{report.dangerous_call_density:.2f} dangerous calls/KiB, "
                        f"hex-escape ratio {report.hex_escape_ratio:.2f}, "
                        f"longest literal {report.longest_string}"
                    ),
                    target=attachment_target(att.index),
                )
            )

    if rules is not None:
        for m in match_rules(rules, payload):
            offsets = "; ".join(f"{sid}@{offs[:5]}" for sid, offs in m.matched_strings)
            analysis.flags.append(
                Flag(
                    source="rules",
                    severity=m.severity,
                    reason=f"rule:{m.rule_name}",
                    evidence=f"rule {m.rule_name} matched attachment payload ({offsets or 'condition-only'})",
                    target=attachment_target(att.index),
                )
            )

    if sandbox is not None:
        verdict = sandbox.submit(payload, att.filename or f"attachment-{att.index}")
        analysis.sandbox = verdict
        if verdict.verdict in ("suspicious", "malicious"):
            analysis.flags.append(
                Flag(
                    source="attachments",
                    severity=85 if verdict.verdict == "malicious" else 55,
                    reason=f"sandbox_{verdict.verdict}",
                    evidence=f"sandbox backend {verdict.backend}: {verdict.detail}",
                    target=attachment_target(att.index),
                )
            )

    return analysis
