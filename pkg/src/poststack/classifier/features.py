"""Feature extraction: 272-dim vector per email.

Indices 0-255: hashed unigram counts (lowercased alphanumeric tokens,
FNV-1a 32-bit mod 256). Indices 256-271: structural features, order
fixed by FEATURE_NAMES. Deterministic: same ParsedEmail, same vector.
"""

from __future__ import annotations

import math
import re

from ..config import MONEY_LEXICON, URGENCY_LEXICON
from ..emlparse import ParsedEmail, body_length, registrable_host, strip_html

N_FEATURES = 272
N_TOKEN_BUCKETS = 256
FEATURE_SCHEMA_VERSION = 1

FEATURE_NAMES = [
    "num_links",
    "num_display_mismatch_links",
    "num_link_hosts_distinct",
    "uppercase_ratio_subject",
    "exclamation_count",
    "urgency_lexicon_hits",
    "money_lexicon_hits",
    "html_present",
    "html_to_text_length_ratio",
    "num_attachments",
    "has_script_attachment",
    "body_length_log10",
    "num_recipients",
    "reply_marker",
    "sender_display_mismatch",
    "encoded_word_count",
]

_TOKEN_RE = re.compile(r"[a-z0-9]+")
_SCRIPT_EXTENSIONS = (".js", ".vbs", ".hta", ".wsf", ".jse", ".html", ".htm")
_DOMAINISH_RE = re.compile(r"(?:[a-z0-9-]+\.)+[a-z]{2,}", re.IGNORECASE)


def fnv1a32(data: bytes) -> int:
    h = 0x811C9DC5
    for b in data:
        h ^= b
        h = (h * 0x01000193) & 0xFFFFFFFF
    return h


def tokenize(text: str) -> list:
    return _TOKEN_RE.findall(text.lower())


def _effective_body(email: ParsedEmail) -> str:
    if email.body_text:
        return email.body_text
    if email.body_html:
        return strip_html(email.body_html)
    return ""


def _lexicon_hits(body_lower: str, lexicon: list) -> int:
    return sum(body_lower.count(term) for term in lexicon)


def _sender_display_mismatch(email: ParsedEmail) -> int:
    if not email.from_:
        return 0
    sender = email.from_[0]
    if not sender.display_name:
        return 0
    own = registrable_host(sender.domain)
    for m in _DOMAINISH_RE.finditer(sender.display_name):
        if registrable_host(m.group(0)) != own:
            return 1
    return 0


def extract_features(
    email: ParsedEmail,
    urgency_lexicon: list = URGENCY_LEXICON,
    money_lexicon: list = MONEY_LEXICON,
) -> list:
    values = [0.0] * N_FEATURES
    body = _effective_body(email)
    for token in tokenize(body):
        values[fnv1a32(token.encode("utf-8")) % N_TOKEN_BUCKETS] += 1.0

    body_lower = body.lower()
    subject_letters = [c for c in email.subject if c.isalpha()]
    s = N_TOKEN_BUCKETS
    values[s + 0] = float(len(email.links))
    values[s + 1] = float(sum(1 for l in email.links if l.display_mismatch))
    values[s + 2] = float(len({l.host for l in email.links}))
    values[s + 3] = (
        sum(1 for c in subject_letters if c.isupper()) / len(subject_letters)
        if subject_letters
        else 0.0
    )
    values[s + 4] = float(body.count("!") + email.subject.count("!"))
    values[s + 5] = float(_lexicon_hits(body_lower, urgency_lexicon))
    values[s + 6] = float(_lexicon_hits(body_lower, money_lexicon))
    values[s + 7] = 1.0 if email.body_html else 0.0
    values[s + 8] = (
        len(email.body_html) / max(1, len(email.body_text or ""))
        if email.body_html
        else 0.0
    )
    values[s + 9] = float(len(email.attachments))
    values[s + 10] = 1.0 if any(
        (a.filename or "").lower().endswith(_SCRIPT_EXTENSIONS)
        or "javascript" in a.declared_mime
        or "ecmascript" in a.declared_mime
        for a in email.attachments
    ) else 0.0
    values[s + 11] = math.log10(body_length(email) + 1)
    values[s + 12] = float(len(email.to) + len(email.cc))
    values[s + 13] = 1.0 if email.subject.lower().lstrip().startswith("re:") else 0.0
    values[s + 14] = float(_sender_display_mismatch(email))
    values[s + 15] = float(email.encoded_word_count)
    return values
