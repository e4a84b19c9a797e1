"""Semantic spear-phish indicators over sender/recipient/thread context.

The default analyzer is a deterministic heuristic; the analyzer
interface (ParsedEmail + history view in, findings out) also accepts an
external HTTP service so an LLM backend can be plugged in later without
touching the pipeline.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Optional, Protocol

from .config import DEFAULT_BRANDS, MONEY_LEXICON, URGENCY_LEXICON
from .emlparse import ParsedEmail, registrable_host, strip_html

logger = logging.getLogger(__name__)

INDICATOR_SEVERITIES = {
    "display_name_spoof": 55,
    "first_contact_sender": 15,
    "urgent_payment_combo": 40,
    "broken_thread_reply": 25,
}

_DOMAINISH_RE = re.compile(r"(?:[a-z0-9-]+\.)+[a-z]{2,}", re.IGNORECASE)
_REPLY_RE = re.compile(r"^\s*re:\s*", re.IGNORECASE)


@dataclass
class SemanticFinding:
    indicator: str
    severity: int
    rationale: str

    def __post_init__(self):
        if not self.rationale:
            raise ValueError("rationale must be non-empty")


class ThreadHistory(Protocol):
    """Read-only view over stored mail used for context checks."""

    def sender_known(self, sender: str, recipients: list) -> bool: ...

    def thread_exists(self, normalized_subject: str, references: list) -> bool: ...

    def top_display_tokens(self, n: int = 20) -> list: ...


class EmptyHistory:
    """History view over an empty store."""

    def sender_known(self, sender: str, recipients: list) -> bool:
        return False

    def thread_exists(self, normalized_subject: str, references: list) -> bool:
        return False

    def top_display_tokens(self, n: int = 20) -> list:
        return []


class HistoryUnavailable(Exception):
    pass


def normalize_subject(subject: str) -> str:
    """Strip reply/forward markers and collapse whitespace for thread
    matching."""
    s = subject
    while True:
        stripped = re.sub(r"^\s*(re|fw|fwd):\s*", "", s, flags=re.IGNORECASE)
        if stripped == s:
            break
        s = stripped
    return re.sub(r"\s+", " ", s).strip().lower()


def _body_lower(email: ParsedEmail) -> str:
    if email.body_text:
        return email.body_text.lower()
    if email.body_html:
        return strip_html(email.body_html).lower()
    return ""


def _check_display_name_spoof(email: ParsedEmail, known_names: list, brands: list) -> Optional[SemanticFinding]:
    if not email.from_ or not email.from_[0].display_name:
        return None
    sender = email.from_[0]
    display = sender.display_name
    display_lower = display.lower()
    own = registrable_host(sender.domain)
    # a domain in the display name that differs from the real one
    for m in _DOMAINISH_RE.finditer(display):
        shown = registrable_host(m.group(0))
        if shown != own:
            return SemanticFinding(
                "display_name_spoof",
                INDICATOR_SEVERITIES["display_name_spoof"],
                f'display name shows "{m.group(0)}" but sender domain is {sender.domain}',
            )
    # a well-known brand / frequent contact name used from a foreign domain
    for name in list(brands) + list(known_names):
        name = name.lower().strip()
        if len(name) < 3:
            continue
        if name in display_lower and name not in sender.domain.lower():
            return SemanticFinding(
                "display_name_spoof",
                INDICATOR_SEVERITIES["display_name_spoof"],
                f'display name "{display}" invokes "{name}" but sender domain is {sender.domain}',
            )
    return None


def analyze_semantics(
    email: ParsedEmail,
    history: ThreadHistory,
    brands: list = DEFAULT_BRANDS,
    urgency_lexicon: list = URGENCY_LEXICON,
    money_lexicon: list = MONEY_LEXICON,
) -> list:
    findings: list[SemanticFinding] = []
    history_ok = True
    try:
        known_names = history.top_display_tokens(20)
    except Exception as exc:
        logger.warning("history unavailable, degraded analysis: %s", exc)
        history_ok = False
        known_names = []

    spoof = _check_display_name_spoof(email, known_names, brands)
    if spoof is not None:
        findings.append(spoof)

    body = _body_lower(email)
    urgency = sum(body.count(t) for t in urgency_lexicon)
    money = sum(body.count(t) for t in money_lexicon)
    if urgency >= 1 and money >= 1:
        findings.append(
            SemanticFinding(
                "urgent_payment_combo",
                INDICATOR_SEVERITIES["urgent_payment_combo"],
                f"body combines urgency ({urgency} hits) with payment language ({money} hits)",
            )
        )

    if history_ok:
        sender = email.from_[0].address.lower() if email.from_ else ""
        recipients = [a.address.lower() for a in email.to + email.cc]
        try:
            if sender and not history.sender_known(sender, recipients):
                findings.append(
                    SemanticFinding(
                        "first_contact_sender",
                        INDICATOR_SEVERITIES["first_contact_sender"],
                        f"sender {sender} has no prior mail to these recipients",
                    )
                )
            if _REPLY_RE.match(email.subject or ""):
                refs = []
                for header in ("References", "In-Reply-To"):
                    value = email.header(header)
                    if value:
                        refs.extend(value.split())
                if not history.thread_exists(normalize_subject(email.subject), refs):
                    findings.append(
                        SemanticFinding(
                            "broken_thread_reply",
                            INDICATOR_SEVERITIES["broken_thread_reply"],
                            f'subject "{email.subject}" claims a reply but no matching thread is stored',
                        )
                    )
        except Exception as exc:
            logger.warning("history query failed mid-analysis: %s", exc)
            history_ok = False

    if not history_ok:
        findings.append(
            SemanticFinding(
                "history_unavailable",
                1,
                "thread history unavailable; only history-free indicators ran",
            )
        )
    return findings


class ExternalAnalyzer:
    """HTTP client filling the analyzer interface for an external
    (e.g. LLM) service. Disabled by default."""

    def __init__(self, url: str, timeout_s: float = 10.0):
        self.url = url
        self.timeout_s = timeout_s

    def __call__(self, email: ParsedEmail, history: ThreadHistory) -> list:
        import requests

        summary = {
            "email_id": email.email_id,
            "subject": email.subject,
            "from_domain": email.from_[0].domain if email.from_ else None,
            "n_recipients": len(email.to) + len(email.cc),
            "link_hosts": sorted({l.host for l in email.links}),
            "body_excerpt": _body_lower(email)[:500],
        }
        try:
            resp = requests.post(self.url, json=summary, timeout=self.timeout_s)
            resp.raise_for_status()
            doc = resp.json()
        except Exception as exc:
            logger.warning("external analyzer failed: %s", exc)
            return []
        out = []
        for item in doc.get("findings", []):
            try:
                out.append(
                    SemanticFinding(
                        str(item["indicator"]),
                        min(100, max(1, int(item.get("severity", 10)))),
                        str(item.get("rationale", "external finding")),
                    )
                )
            except (KeyError, ValueError):
                continue
        return out
