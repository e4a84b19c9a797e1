"""Event-driven orchestration: from stored blob to finalized, exported
record.

Stage chain per email: parse -> {rules, intel, classifier, semantic} ->
per-attachment analysis -> verdict aggregation -> store -> SIEM export.
Every stage is idempotent, so at-least-once event delivery (including
duplicate EmailStored events) converges on exactly one record and one
SIEM export per email.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .attachments import SandboxClient, analyze_attachment
from .classifier import extract_features, predict
from .classifier.forest import ClassDistribution, ForestModel
from .config import Config, VerdictPolicy
from .emlparse import ParsedEmail, parse_eml, registrable_host
from .errors import HashMismatch, InvalidCount
from .flags import Flag, Verdict
from .ingest import BlobStore, IngestReceipt, utc_now_rfc3339
from .intel import Blocklist, check_sender, check_url
from .rules import Ruleset, match_rules
from .semantic import analyze_semantics
from .store import EmailRecord, Store

logger = logging.getLogger(__name__)

# cost anchor: 10,000-user commercial gateway vs self-hosted processing
# of 18,000,000 emails/month
GATEWAY_ANNUAL_USD_PER_10K_USERS = 823_200.0
POST_ANNUAL_USD_PER_18M_EMAILS = 12_000.0
ANCHOR_USERS = 10_000
ANCHOR_EMAILS_PER_MONTH = 18_000_000


def cost_model(users: int, emails_per_month: int) -> dict:
    """Linear annual-cost comparison between a per-user commercial gateway
    and this self-hosted stack billed by email volume."""
    if users < 1:
        raise InvalidCount(f"users must be >= 1, got {users}")
    if emails_per_month < 0:
        raise InvalidCount(f"emails_per_month must be >= 0, got {emails_per_month}")
    gateway = GATEWAY_ANNUAL_USD_PER_10K_USERS * users / ANCHOR_USERS
    post = POST_ANNUAL_USD_PER_18M_EMAILS * emails_per_month / ANCHOR_EMAILS_PER_MONTH
    if post > 0:
        ratio = gateway / post
        savings_percent = (1 - post / gateway) * 100.0
    else:
        ratio = "n/a"
        savings_percent = 100.0
    return {
        "gateway_annual_usd": gateway,
        "post_annual_usd": post,
        "ratio": ratio,
        "savings_percent": savings_percent,
    }


# ---------------------------------------------------------------------------
# verdict aggregation


def classifier_flag(dist: ClassDistribution) -> Optional[Flag]:
    """The classifier's contribution as a synthetic flag."""
    severity = round(60 * dist.p_malicious + 30 * dist.p_spam)
    if severity < 1:
        return None
    return Flag(
        source="classifier",
        severity=severity,
        reason=f"classifier_{dist.label}",
        evidence=(
            f"forest distribution benign={dist.p_benign:.3f} "
            f"spam={dist.p_spam:.3f} malicious={dist.p_malicious:.3f}"
        ),
    )


def aggregate_verdict(
    flags: list,
    classifier_out: ClassDistribution,
    policy: Optional[VerdictPolicy] = None,
) -> Verdict:
    """Pure policy function: weighted flag severities -> classification and
    disposition. ``flags`` must already include the classifier's synthetic
    flag (see classifier_flag) so its weight applies uniformly."""
    policy = policy or VerdictPolicy()
    contributing = []
    total = 0.0
    for i, flag in enumerate(flags):
        weight = policy.source_weights.get(flag.source, 1.0)
        contributing.append((i, weight))
        total += flag.severity * weight
    threat_score = min(100, round(total))

    if threat_score >= policy.malicious_score or any(
        f.severity >= policy.single_flag_override for f in flags
    ):
        classification = "malicious"
    elif threat_score >= policy.spam_score or (
        classifier_out.label == "spam" and classifier_out.confidence >= policy.spam_confidence
    ):
        classification = "spam"
    else:
        classification = "benign"

    disposition = {"malicious": "blocked", "spam": "quarantined", "benign": "delivered"}[
        classification
    ]
    return Verdict(classification, threat_score, disposition, contributing)


# ---------------------------------------------------------------------------
# SIEM export


class SiemExporter:
    """Exactly-once JSONL export of flags and verdicts.

    A record's block ends with its verdict line; the cursor file names
    records whose block is fully on disk. On startup, blocks without a
    verdict line (a crash mid-export) are dropped by rewriting the sink,
    then re-exported.
    """

    def __init__(self, sink_path, webhook_url: str = "", session=None, webhook_backoff_s=(0.5, 1.0, 2.0)):
        self.sink_path = Path(sink_path)
        self.sink_path.parent.mkdir(parents=True, exist_ok=True)
        self.cursor_path = self.sink_path.parent / "cursor.jsonl"
        self.webhook_url = webhook_url
        self.webhook_backoff_s = webhook_backoff_s
        self._session = session
        self._lock = threading.Lock()
        self.exported: set = set()
        self._recover()

    def _recover(self):
        if self.cursor_path.exists():
            for line in self.cursor_path.read_text(encoding="utf-8").splitlines():
                try:
                    self.exported.add(json.loads(line)["email_id"])
                except (ValueError, KeyError):
                    continue
        if not self.sink_path.exists():
            return
        lines = self.sink_path.read_text(encoding="utf-8").splitlines()
        complete = set()
        parsed = []
        for line in lines:
            try:
                doc = json.loads(line)
            except ValueError:
                continue
            parsed.append((doc, line))
            if doc.get("kind") == "verdict":
                complete.add(doc["email_id"])
        kept = [line for doc, line in parsed if doc["email_id"] in complete]
        if len(kept) != len(lines):
            tmp = self.sink_path.with_suffix(".tmp")
            tmp.write_text("".join(l + "\n" for l in kept), encoding="utf-8")
            os.replace(tmp, self.sink_path)
            logger.warning("dropped %d partial SIEM lines during recovery", len(lines) - len(kept))
        for eid in complete - self.exported:
            self._write_cursor(eid)

    def _write_cursor(self, email_id: str):
        with open(self.cursor_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"email_id": email_id}) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self.exported.add(email_id)

    def _events_for(self, record: EmailRecord) -> list:
        ts = utc_now_rfc3339()
        events = []
        for flag in record.flags:
            events.append(
                {
                    "ts": ts,
                    "email_id": record.email_id,
                    "kind": "flag",
                    "source": flag.source,
                    "severity": flag.severity,
                    "reason": flag.reason,
                    "evidence": flag.evidence,
                }
            )
        v = record.verdict
        events.append(
            {
                "ts": ts,
                "email_id": record.email_id,
                "kind": "verdict",
                "source": "pipeline",
                "severity": v.threat_score,
                "reason": "verdict",
                "evidence": f"{v.classification} via policy",
                "classification": v.classification,
                "threat_score": v.threat_score,
                "disposition": v.disposition,
            }
        )
        return events

    def export(self, record: EmailRecord):
        if record.verdict is None:
            raise ValueError("export requires a finalized record")
        with self._lock:
            if record.email_id in self.exported:
                return
            events = self._events_for(record)
            with open(self.sink_path, "a", encoding="utf-8") as fh:
                for e in events:
                    fh.write(json.dumps(e, ensure_ascii=False) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._post_webhook(events)
            self._write_cursor(record.email_id)

    def _post_webhook(self, events: list):
        if not self.webhook_url:
            return
        session = self._session
        if session is None:
            import requests

            session = requests
        for attempt, pause in enumerate(self.webhook_backoff_s, start=1):
            try:
                resp = session.post(self.webhook_url, json=events, timeout=10)
                resp.raise_for_status()
                return
            except Exception as exc:
                logger.warning("SIEM webhook attempt %d failed: %s", attempt, exc)
                time.sleep(pause)
        logger.error("SIEM webhook gave up after %d attempts", len(self.webhook_backoff_s))


# ---------------------------------------------------------------------------
# the pipeline


@dataclass
class Event:
    kind: str  # EmailStored
    receipt: IngestReceipt
    attempt: int = 0


class Pipeline:
    def __init__(
        self,
        config: Config,
        store: Store,
        blobs: BlobStore,
        ruleset: Ruleset,
        blocklist: Blocklist,
        model: Optional[ForestModel] = None,
        sandbox: Optional[SandboxClient] = None,
        exporter: Optional[SiemExporter] = None,
        retry_backoff_s=(1.0, 4.0, 16.0),
    ):
        self.config = config
        self.store = store
        self.blobs = blobs
        self.ruleset = ruleset
        self.blocklist = blocklist
        self.model = model
        self.sandbox = sandbox
        self.exporter = exporter or SiemExporter(config.siem_path, config.siem_webhook_url)
        self.retry_backoff_s = retry_backoff_s
        self._queue: queue.Queue = queue.Queue()
        self._workers: list = []
        self._stop = threading.Event()
        self._inflight: set = set()
        self._inflight_lock = threading.Lock()
        self._store_lock = threading.Lock()

    # -- event intake -------------------------------------------------------

    def on_stored(self, receipt: IngestReceipt):
        """Ingestor callback: enqueue an EmailStored event."""
        self._queue.put(Event("EmailStored", receipt))

    def start(self, workers: Optional[int] = None):
        n = workers or self.config.workers
        self._stop.clear()
        for i in range(n):
            t = threading.Thread(target=self._worker, name=f"pipeline-{i}", daemon=True)
            t.start()
            self._workers.append(t)

    def _worker(self):
        while not self._stop.is_set():
            try:
                event = self._queue.get(timeout=0.1)
            except queue.Empty:
                continue
            try:
                self.process_email(event.receipt)
            except Exception:
                logger.exception("unhandled pipeline failure for %s", event.receipt.email_id)
            finally:
                self._queue.task_done()

    def drain(self):
        self._queue.join()

    def stop(self):
        self._stop.set()
        for t in self._workers:
            t.join(timeout=5)
        self._workers.clear()

    # -- stage execution ----------------------------------------------------

    def _run_stage(self, name: str, email_id: str, fn, flags: list, fallback):
        """Run one stage with retries; on exhaustion record a
        processing_error flag and carry on with the fallback value."""
        max_attempts = self.config.max_retries
        last_exc: Optional[Exception] = None
        for attempt in range(max_attempts):
            try:
                return fn()
            except Exception as exc:  # noqa: BLE001 - stage isolation is the point
                last_exc = exc
                logger.warning("stage %s attempt %d failed for %s: %s", name, attempt + 1, email_id, exc)
                if attempt + 1 < max_attempts:
                    time.sleep(self.retry_backoff_s[min(attempt, len(self.retry_backoff_s) - 1)])
        flags.append(
            Flag(
                source="pipeline",
                severity=10,
                reason="processing_error",
                evidence=f"stage {name} failed after {max_attempts} attempts: {last_exc}",
            )
        )
        return fallback

    def _direction(self, email: ParsedEmail) -> str:
        locals_ = {d.lower() for d in self.config.local_domains}
        if not locals_:
            return "unknown"
        sender_local = any(a.domain.lower() in locals_ for a in email.from_)
        rcpt_local = any(a.domain.lower() in locals_ for a in email.to + email.cc)
        if sender_local and not rcpt_local:
            return "outbound"
        if rcpt_local:
            return "inbound"
        return "unknown"

    def process_email(self, receipt: IngestReceipt) -> Optional[EmailRecord]:
        """Run every stage for one email; re-delivery is a no-op once the
        record is final and exported."""
        email_id = receipt.email_id
        with self._inflight_lock:
            if email_id in self._inflight:
                return None
            self._inflight.add(email_id)
        try:
            return self._process_locked(receipt)
        finally:
            with self._inflight_lock:
                self._inflight.discard(email_id)

    def _process_locked(self, receipt: IngestReceipt) -> EmailRecord:
        email_id = receipt.email_id
        existing = self.store.records.get(email_id)
        if existing is not None and existing.final:
            self.exporter.export(existing)
            return existing

        flags: list = []
        raw = self.blobs.read(email_id)
        email = self._run_stage(
            "parse", email_id, lambda: parse_eml(raw), flags, ParsedEmail(email_id=email_id)
        )

        self._run_stage("rules", email_id, lambda: self._stage_rules(raw, flags), flags, None)
        self._run_stage(
            "intel", email_id, lambda: self._stage_intel(email, receipt, flags), flags, None
        )
        dist = self._run_stage(
            "classifier",
            email_id,
            lambda: self._stage_classifier(email, flags),
            flags,
            ClassDistribution(1.0, 0.0, 0.0),
        )
        self._run_stage("semantic", email_id, lambda: self._stage_semantic(email, flags), flags, None)

        analyses: list = []
        attachment_texts: list = []
        for i, att in enumerate(email.attachments):
            payload = email.attachment_payloads[i] if i < len(email.attachment_payloads) else b""
            self._run_stage(
                f"attachment:{i}",
                email_id,
                lambda att=att, payload=payload: self._stage_attachment(
                    att, payload, email, flags, analyses, attachment_texts
                ),
                flags,
                None,
            )

        verdict = aggregate_verdict(flags, dist, self.config.policy)
        record = EmailRecord(
            email=email,
            ingest=receipt,
            flags=flags,
            attachment_analyses=analyses,
            verdict=None,
            direction=self._direction(email),
            attachment_texts=attachment_texts,
        )
        with self._store_lock:
            current = self.store.records.get(email_id)
            if current is None or not current.final:
                self.store.put_record(record)
                self.store.finalize_verdict(email_id, verdict)
            record = self.store.get(email_id)
        self.exporter.export(record)
        return record

    # -- individual stages --------------------------------------------------

    def _stage_rules(self, raw: bytes, flags: list):
        for m in match_rules(self.ruleset, raw):
            sids = ", ".join(sid for sid, _offs in m.matched_strings) or "condition-only"
            flags.append(
                Flag(
                    source="rules",
                    severity=m.severity,
                    reason=f"rule:{m.rule_name}",
                    evidence=f"rule {m.rule_name} matched raw message ({sids})",
                )
            )

    def _stage_intel(self, email: ParsedEmail, receipt: IngestReceipt, flags: list):
        for link in email.links:
            hit = check_url(link, self.blocklist)
            if hit is not None:
                flags.append(hit)
        sender = email.from_[0] if email.from_ else None
        hit = check_sender(sender, receipt.envelope_from, self.blocklist)
        if hit is not None:
            flags.append(hit)

    def _stage_classifier(self, email: ParsedEmail, flags: list) -> ClassDistribution:
        if self.model is None:
            return ClassDistribution(1.0, 0.0, 0.0)
        fv = extract_features(email, self.config.urgency_lexicon, self.config.money_lexicon)
        dist = predict(self.model, fv)
        synthetic = classifier_flag(dist)
        if synthetic is not None:
            flags.append(synthetic)
        return dist

    def _stage_semantic(self, email: ParsedEmail, flags: list):
        findings = analyze_semantics(
            email,
            self.store.history(),
            brands=self.config.brands,
            urgency_lexicon=self.config.urgency_lexicon,
            money_lexicon=self.config.money_lexicon,
        )
        for f in findings:
            flags.append(
                Flag(source="semantic", severity=f.severity, reason=f.indicator, evidence=f.rationale)
            )

    def _stage_attachment(self, att, payload: bytes, email: ParsedEmail, flags: list,
                          analyses: list, attachment_texts: list):
        try:
            analysis = analyze_attachment(
                att, payload, rules=self.ruleset, intel=self.blocklist, sandbox=self.sandbox
            )
        except HashMismatch as exc:
            flags.append(exc.integrity_flag)
            return
        analyses.append(analysis)
        flags.extend(analysis.flags)
        known = {l.url for l in email.links}
        for link in analysis.qr_links:
            if link.url not in known:
                email.links.append(link)
                known.add(link.url)
        if analysis.detected_type == "plain_text":
            attachment_texts.append((att.index, payload.decode("utf-8", "replace")))
