"""Embedded email-record store: append-only JSONL journal, positional
inverted index, and the forensic query language.

Layout under <data_dir>: records/journal-0001.jsonl (durable truth),
index/snapshot-*.bin (rebuildable cache). The index is always derivable
from the journal, so deleting index/ only costs a rebuild on open.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .attachments import AttachmentAnalysis
from .emlparse import ParsedEmail, strip_html
from .errors import (
    AlreadyFinal,
    DuplicateFinalRecord,
    QuerySyntaxError,
    StorageFailure,
    UnknownEmail,
)
from .flags import Flag, Verdict
from .ingest import IngestReceipt
from .semantic import normalize_subject

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z0-9]{2,}")

# fields carrying positional postings; unqualified terms search all of them
FIELDS = ("subject", "body", "from", "to", "attachment", "flag", "link")

_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")


def tokenize(text: str) -> list:
    return _TOKEN_RE.findall(text.lower())


@dataclass
class EmailRecord:
    email: ParsedEmail
    ingest: IngestReceipt
    flags: list = field(default_factory=list)
    attachment_analyses: list = field(default_factory=list)
    verdict: Optional[Verdict] = None
    direction: str = "unknown"  # inbound | outbound | unknown
    attachment_texts: list = field(default_factory=list)  # (index, decoded text)

    @property
    def email_id(self) -> str:
        return self.email.email_id

    @property
    def final(self) -> bool:
        return self.verdict is not None

    def to_dict(self) -> dict:
        return {
            "email": self.email.to_dict(),
            "ingest": self.ingest.to_dict(),
            "flags": [f.to_dict() for f in self.flags],
            "attachment_analyses": [a.to_dict() for a in self.attachment_analyses],
            "verdict": self.verdict.to_dict() if self.verdict else None,
            "direction": self.direction,
            "attachment_texts": [list(t) for t in self.attachment_texts],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmailRecord":
        return cls(
            email=ParsedEmail.from_dict(d["email"]),
            ingest=IngestReceipt.from_dict(d["ingest"]),
            flags=[Flag.from_dict(f) for f in d.get("flags", [])],
            attachment_analyses=[AttachmentAnalysis.from_dict(a) for a in d.get("attachment_analyses", [])],
            verdict=Verdict.from_dict(d["verdict"]) if d.get("verdict") else None,
            direction=d.get("direction", "unknown"),
            attachment_texts=[tuple(t) for t in d.get("attachment_texts", [])],
        )


def record_field_texts(record: EmailRecord) -> dict:
    """Searchable text per field, in indexing order."""
    email = record.email
    body_parts = []
    if email.body_text:
        body_parts.append(email.body_text)
    if email.body_html:
        body_parts.append(strip_html(email.body_html))
    return {
        "subject": [email.subject],
        "body": body_parts,
        "from": [f"{a.local_part}@{a.domain}" for a in email.from_],
        "to": [f"{a.local_part}@{a.domain}" for a in email.to + email.cc],
        "attachment": [a.filename or "" for a in email.attachments]
        + [text for _i, text in record.attachment_texts],
        "flag": [f.reason for f in record.flags],
        "link": [l.host for l in email.links],
    }


def index_tokens(record: EmailRecord) -> dict:
    """field -> token -> list of positions (contiguous per field)."""
    postings: dict = {f: {} for f in FIELDS}
    for fname, texts in record_field_texts(record).items():
        pos = 0
        target = postings[fname]
        for text in texts:
            for tok in tokenize(text):
                target.setdefault(tok, []).append(pos)
                pos += 1
        if fname in ("from", "to"):
            # whole addresses are searchable as single terms
            for text in texts:
                if text:
                    target.setdefault(text.lower(), []).append(pos)
                    pos += 1
    return postings


# ---------------------------------------------------------------------------
# query language


@dataclass(frozen=True)
class TermQ:
    field: Optional[str]  # None = any field
    token: str


@dataclass(frozen=True)
class PhraseQ:
    field: Optional[str]
    tokens: tuple


@dataclass(frozen=True)
class VerdictQ:
    value: str


@dataclass(frozen=True)
class HasAttachmentQ:
    pass


@dataclass(frozen=True)
class DateQ:
    op: str  # ">=" | "<="
    date: str


@dataclass(frozen=True)
class AndQ:
    parts: tuple


@dataclass(frozen=True)
class OrQ:
    parts: tuple


@dataclass(frozen=True)
class NotQ:
    part: object


_QUERY_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<date>date\s*(?P<dateop>>=|<=)\s*(?P<dateval>[^\s()"]+))
  | (?P<fieldphrase>(?P<fp_field>[a-z]+):"(?P<fp_body>[^"]*)")
  | (?P<phrase>"(?P<p_body>[^"]*)")
  | (?P<fieldterm>(?P<ft_field>[a-z]+):(?P<ft_body>[^\s()"]+))
  | (?P<word>[^\s()"]+)
    """,
    re.VERBOSE,
)

_FIELD_PREFIXES = {"from", "to", "subject", "body", "attachment", "flag", "link"}
_VERDICTS = {"benign", "spam", "malicious"}


def _lex_query(text: str) -> list:
    out = []
    pos = 0
    while pos < len(text):
        m = _QUERY_TOKEN_RE.match(text, pos)
        if m is None:
            raise QuerySyntaxError(f"unrecognized query syntax at position {pos}", pos)
        if m.lastgroup != "ws" and not m.group("ws"):
            out.append((m, pos))
        pos = m.end()
    return out


class _QueryParser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _lex_query(text)
        self.i = 0

    def _peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def parse(self):
        if not self.tokens:
            raise QuerySyntaxError("empty query", 0)
        node = self._or()
        if self._peek() is not None:
            m, pos = self._peek()
            raise QuerySyntaxError(f"unexpected {m.group(0)!r} at position {pos}", pos)
        return node

    def _or(self):
        parts = [self._and()]
        while True:
            nxt = self._peek()
            if nxt and nxt[0].group("word") and nxt[0].group("word").upper() == "OR":
                self.i += 1
                parts.append(self._and())
            else:
                break
        return parts[0] if len(parts) == 1 else OrQ(tuple(parts))

    def _and(self):
        parts = [self._unary()]
        while True:
            nxt = self._peek()
            if nxt is None:
                break
            m, _pos = nxt
            word = m.group("word")
            if word and word.upper() == "OR":
                break
            if m.group("rparen"):
                break
            if word and word.upper() == "AND":
                self.i += 1
                parts.append(self._unary())
                continue
            parts.append(self._unary())
        return parts[0] if len(parts) == 1 else AndQ(tuple(parts))

    def _unary(self):
        nxt = self._peek()
        if nxt is None:
            raise QuerySyntaxError("query ended unexpectedly", len(self.text))
        m, pos = nxt
        word = m.group("word")
        if word and word.upper() == "NOT":
            self.i += 1
            return NotQ(self._unary())
        return self._primary()

    def _primary(self):
        nxt = self._peek()
        if nxt is None:
            raise QuerySyntaxError("query ended unexpectedly", len(self.text))
        m, pos = nxt
        self.i += 1
        if m.group("lparen"):
            node = self._or()
            closing = self._peek()
            if closing is None or not closing[0].group("rparen"):
                raise QuerySyntaxError(f"unclosed parenthesis opened at position {pos}", pos)
            self.i += 1
            return node
        if m.group("rparen"):
            raise QuerySyntaxError(f"unmatched ')' at position {pos}", pos)
        if m.group("date"):
            val = m.group("dateval")
            if not _DATE_RE.match(val):
                raise QuerySyntaxError(f"bad date {val!r} at position {pos} (want YYYY-MM-DD)", pos)
            return DateQ(m.group("dateop"), val)
        if m.group("fieldphrase"):
            return self._field_node(m.group("fp_field"), m.group("fp_body"), pos, phrase=True)
        if m.group("phrase"):
            toks = tuple(tokenize(m.group("p_body")))
            if not toks:
                raise QuerySyntaxError(f"empty phrase at position {pos}", pos)
            return PhraseQ(None, toks)
        if m.group("fieldterm"):
            return self._field_node(m.group("ft_field"), m.group("ft_body"), pos, phrase=False)
        # bare word
        word = m.group("word")
        if word.upper() in ("AND", "OR", "NOT"):
            raise QuerySyntaxError(f"operator {word} needs an operand at position {pos}", pos)
        toks = tokenize(word)
        if not toks:
            raise QuerySyntaxError(f"term {word!r} has no searchable characters at position {pos}", pos)
        if len(toks) == 1 and "@" not in word:
            return TermQ(None, toks[0])
        if "@" in word:
            return TermQ(None, word.lower())
        return PhraseQ(None, tuple(toks))

    def _field_node(self, fname: str, body: str, pos: int, phrase: bool):
        if fname == "verdict":
            if body not in _VERDICTS:
                raise QuerySyntaxError(f"unknown verdict {body!r} at position {pos}", pos)
            return VerdictQ(body)
        if fname == "has":
            if body != "attachment":
                raise QuerySyntaxError(f"unknown has:{body} at position {pos}", pos)
            return HasAttachmentQ()
        if fname not in _FIELD_PREFIXES:
            raise QuerySyntaxError(f"unknown field {fname!r} at position {pos}", pos)
        if "@" in body and not phrase:
            return TermQ(fname, body.lower())
        toks = tuple(tokenize(body))
        if not toks:
            raise QuerySyntaxError(f"empty {fname}: term at position {pos}", pos)
        if len(toks) == 1:
            return TermQ(fname, toks[0])
        return PhraseQ(fname, toks)


def parse_query(text: str):
    return _QueryParser(text).parse()


def positive_leaves(node) -> list:
    """Leaf term/phrase nodes not under a NOT — the score contributors."""
    if isinstance(node, (TermQ, PhraseQ, VerdictQ, HasAttachmentQ, DateQ)):
        return [node]
    if isinstance(node, NotQ):
        return []
    if isinstance(node, (AndQ, OrQ)):
        out = []
        for p in node.parts:
            out.extend(positive_leaves(p))
        return out
    return []


# ---------------------------------------------------------------------------
# search result types


@dataclass
class SearchHit:
    email_id: str
    snippet: str
    score: int
    verdict: Optional[dict]
    received_at: str
    subject: str

    def to_dict(self) -> dict:
        return {
            "email_id": self.email_id,
            "snippet": self.snippet,
            "score": self.score,
            "verdict": self.verdict,
            "received_at": self.received_at,
            "subject": self.subject,
        }


@dataclass
class SearchResult:
    hits: list
    total_count: int
    next_cursor: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "hits": [h.to_dict() for h in self.hits],
            "total_count": self.total_count,
            "next_cursor": self.next_cursor,
        }


def _encode_cursor(key: tuple) -> str:
    return base64.urlsafe_b64encode(json.dumps(list(key)).encode()).decode()


def _decode_cursor(cursor: str) -> tuple:
    try:
        return tuple(json.loads(base64.urlsafe_b64decode(cursor.encode())))
    except Exception as exc:
        raise QuerySyntaxError(f"bad cursor: {exc}", 0) from exc


# ---------------------------------------------------------------------------
# the store


class Store:
    MAX_LIMIT = 200

    def __init__(self, data_dir):
        self.data_dir = Path(data_dir)
        self.records_dir = self.data_dir / "records"
        self.index_dir = self.data_dir / "index"
        self.records_dir.mkdir(parents=True, exist_ok=True)
        self.index_dir.mkdir(parents=True, exist_ok=True)
        self.journal_path = self.records_dir / "journal-0001.jsonl"
        self.records: dict = {}
        # postings[field][token] = {email_id: [positions]}
        self.postings: dict = {f: {} for f in FIELDS}
        self.by_verdict: dict = {v: set() for v in _VERDICTS}
        self.with_attachments: set = set()
        self._field_pos: dict = {}  # (email_id, field) -> next position
        self._journal_fh = None
        self._replayed_offset = 0
        self._open()

    # -- journal ------------------------------------------------------------

    def _open(self):
        offset = self._load_snapshot()
        if self.journal_path.exists():
            with open(self.journal_path, "r", encoding="utf-8") as fh:
                fh.seek(offset)
                for line in fh:
                    if not line.strip():
                        continue
                    try:
                        self._apply(json.loads(line), durable=False)
                    except (ValueError, KeyError) as exc:
                        logger.error("skipping corrupt journal line: %s", exc)
                self._replayed_offset = fh.tell()
        self._journal_fh = open(self.journal_path, "a", encoding="utf-8")

    def close(self):
        if self._journal_fh:
            self._journal_fh.close()
            self._journal_fh = None

    def _append_journal(self, op: dict):
        try:
            line = json.dumps(op, ensure_ascii=False)
            self._journal_fh.write(line + "\n")
            self._journal_fh.flush()
            os.fsync(self._journal_fh.fileno())
        except OSError as exc:
            raise StorageFailure(f"journal write failed: {exc}") from exc

    def _apply(self, op: dict, durable: bool):
        kind = op["op"]
        if kind == "put":
            record = EmailRecord.from_dict(op["record"])
            if record.email_id in self.records:
                self._unindex_record(record.email_id)
            self.records[record.email_id] = record
            self._index_record(record)
        elif kind == "flag":
            record = self.records[op["email_id"]]
            flag = Flag.from_dict(op["flag"])
            record.flags.append(flag)
            self._index_field_text(record.email_id, "flag", flag.reason)
        elif kind == "final":
            record = self.records[op["email_id"]]
            record.verdict = Verdict.from_dict(op["verdict"])
            self.by_verdict[record.verdict.classification].add(record.email_id)
        else:
            raise ValueError(f"unknown journal op {kind!r}")

    # -- indexing -----------------------------------------------------------

    def _index_record(self, record: EmailRecord):
        eid = record.email_id
        for fname, tokens in index_tokens(record).items():
            findex = self.postings[fname]
            end = 0
            for tok, positions in tokens.items():
                findex.setdefault(tok, {})[eid] = positions
                end = max(end, positions[-1] + 1)
            self._field_pos[(eid, fname)] = end
        if record.email.attachments:
            self.with_attachments.add(eid)
        if record.verdict is not None:
            self.by_verdict[record.verdict.classification].add(eid)

    def _unindex_record(self, eid: str):
        """Drop all postings for one email (pre-final overwrite only)."""
        for fname, findex in self.postings.items():
            empty = []
            for tok, ids in findex.items():
                ids.pop(eid, None)
                if not ids:
                    empty.append(tok)
            for tok in empty:
                del findex[tok]
            self._field_pos.pop((eid, fname), None)
        self.with_attachments.discard(eid)
        for ids in self.by_verdict.values():
            ids.discard(eid)

    def _index_field_text(self, eid: str, fname: str, text: str):
        findex = self.postings[fname]
        pos = self._field_pos.get((eid, fname), 0)
        for tok in tokenize(text):
            findex.setdefault(tok, {}).setdefault(eid, []).append(pos)
            pos += 1
        self._field_pos[(eid, fname)] = pos

    # -- snapshot (rebuildable cache; journal stays the truth) --------------

    def save_snapshot(self):
        doc = {
            "journal_offset": self._journal_fh.tell() if self._journal_fh else 0,
            "records": [r.to_dict() for r in self.records.values()],
        }
        tmp = self.index_dir / "snapshot-0001.bin.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.index_dir / "snapshot-0001.bin")

    def _load_snapshot(self) -> int:
        path = self.index_dir / "snapshot-0001.bin"
        if not path.exists():
            return 0
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
            for rd in doc["records"]:
                record = EmailRecord.from_dict(rd)
                self.records[record.email_id] = record
                self._index_record(record)
            return int(doc["journal_offset"])
        except (ValueError, KeyError, OSError) as exc:
            logger.warning("snapshot unreadable, full journal replay: %s", exc)
            self.records.clear()
            self.postings = {f: {} for f in FIELDS}
            self.by_verdict = {v: set() for v in _VERDICTS}
            self.with_attachments = set()
            self._field_pos = {}
            return 0

    # -- writes -------------------------------------------------------------

    def put_record(self, record: EmailRecord):
        existing = self.records.get(record.email_id)
        if existing is not None and existing.final:
            raise DuplicateFinalRecord(f"record {record.email_id} already finalized")
        op = {"op": "put", "record": record.to_dict()}
        self._append_journal(op)
        self._apply(op, durable=True)

    def append_flag(self, email_id: str, flag: Flag):
        record = self.records.get(email_id)
        if record is None:
            raise UnknownEmail(email_id)
        if record.final:
            raise AlreadyFinal(f"record {email_id} is finalized")
        op = {"op": "flag", "email_id": email_id, "flag": flag.to_dict()}
        self._append_journal(op)
        self._apply(op, durable=True)

    def finalize_verdict(self, email_id: str, verdict: Verdict):
        record = self.records.get(email_id)
        if record is None:
            raise UnknownEmail(email_id)
        if record.final:
            raise AlreadyFinal(f"record {email_id} is finalized")
        op = {"op": "final", "email_id": email_id, "verdict": verdict.to_dict()}
        self._append_journal(op)
        self._apply(op, durable=True)

    # -- reads --------------------------------------------------------------

    def get(self, email_id: str) -> EmailRecord:
        record = self.records.get(email_id)
        if record is None:
            raise UnknownEmail(email_id)
        return record

    def __len__(self):
        return len(self.records)

    # -- query evaluation ---------------------------------------------------

    def _term_ids(self, node: TermQ) -> set:
        fields = [node.field] if node.field else list(FIELDS)
        out: set = set()
        for fname in fields:
            out |= set(self.postings[fname].get(node.token, {}))
        return out

    def _phrase_ids(self, node: PhraseQ) -> set:
        fields = [node.field] if node.field else list(FIELDS)
        out: set = set()
        for fname in fields:
            findex = self.postings[fname]
            maps = [findex.get(tok, {}) for tok in node.tokens]
            candidates = set(maps[0])
            for m in maps[1:]:
                candidates &= set(m)
            for eid in candidates:
                starts = set(maps[0][eid])
                for k, m in enumerate(maps[1:], start=1):
                    starts &= {p - k for p in m[eid]}
                    if not starts:
                        break
                if starts:
                    out.add(eid)
        return out

    def _eval(self, node) -> set:
        universe = set(self.records)
        if isinstance(node, TermQ):
            return self._term_ids(node)
        if isinstance(node, PhraseQ):
            return self._phrase_ids(node)
        if isinstance(node, VerdictQ):
            return set(self.by_verdict[node.value])
        if isinstance(node, HasAttachmentQ):
            return set(self.with_attachments)
        if isinstance(node, DateQ):
            out = set()
            for eid, record in self.records.items():
                day = record.ingest.received_at[:10]
                if (node.op == ">=" and day >= node.date) or (
                    node.op == "<=" and day <= node.date
                ):
                    out.add(eid)
            return out
        if isinstance(node, AndQ):
            result = universe
            for p in node.parts:
                result &= self._eval(p)
                if not result:
                    break
            return result
        if isinstance(node, OrQ):
            result: set = set()
            for p in node.parts:
                result |= self._eval(p)
            return result
        if isinstance(node, NotQ):
            return universe - self._eval(node.part)
        raise TypeError(f"unknown query node {node!r}")

    def _score(self, eid: str, leaves: list) -> int:
        score = 0
        for leaf in leaves:
            if isinstance(leaf, TermQ):
                if eid in self._term_ids(leaf):
                    score += 1
            elif isinstance(leaf, PhraseQ):
                if eid in self._phrase_ids(leaf):
                    score += 1
            elif isinstance(leaf, (VerdictQ, HasAttachmentQ, DateQ)):
                if eid in self._eval(leaf):
                    score += 1
        return score

    def _snippet(self, record: EmailRecord, leaves: list) -> str:
        body = record.email.body_text or (
            strip_html(record.email.body_html) if record.email.body_html else ""
        )
        terms = []
        for leaf in leaves:
            if isinstance(leaf, TermQ):
                terms.append(leaf.token)
            elif isinstance(leaf, PhraseQ):
                terms.extend(leaf.tokens)
        lower = body.lower()
        for term in terms:
            at = lower.find(term)
            if at >= 0:
                start = max(0, at - 30)
                return body[start : start + 80].strip()
        return body[:80].strip() or record.email.subject[:80]

    def search(self, query_text: str, limit: int = 50, cursor: Optional[str] = None) -> SearchResult:
        limit = max(1, min(int(limit), self.MAX_LIMIT))
        ast = parse_query(query_text)
        matched = self._eval(ast)
        leaves = positive_leaves(ast)

        keyed = []
        for eid in matched:
            record = self.records[eid]
            score = self._score(eid, leaves)
            keyed.append((score, record.ingest.received_at, eid))
        # score desc, received_at desc, email_id asc
        keyed.sort(key=lambda k: (-k[0], _desc_str(k[1]), k[2]))

        start = 0
        if cursor is not None:
            last = _decode_cursor(cursor)
            for i, key in enumerate(keyed):
                if (-key[0], _desc_str(key[1]), key[2]) > (
                    -last[0],
                    _desc_str(last[1]),
                    last[2],
                ):
                    start = i
                    break
            else:
                start = len(keyed)
        page = keyed[start : start + limit]

        hits = []
        for score, received_at, eid in page:
            record = self.records[eid]
            hits.append(
                SearchHit(
                    email_id=eid,
                    snippet=self._snippet(record, leaves),
                    score=score,
                    verdict=record.verdict.to_dict() if record.verdict else None,
                    received_at=received_at,
                    subject=record.email.subject,
                )
            )
        next_cursor = None
        if start + limit < len(keyed):
            last_key = page[-1]
            next_cursor = _encode_cursor((last_key[0], last_key[1], last_key[2]))
        return SearchResult(hits=hits, total_count=len(keyed), next_cursor=next_cursor)

    # -- history view for semantic analysis ---------------------------------

    def history(self) -> "StoreHistory":
        return StoreHistory(self)


def _desc_str(s: str) -> tuple:
    """Sort key inverting lexicographic order of an ASCII string."""
    return tuple(-ord(c) for c in s)


class StoreHistory:
    """ThreadHistory implementation backed by stored records."""

    def __init__(self, store: Store):
        self.store = store

    def sender_known(self, sender: str, recipients: list) -> bool:
        if not self.store.records:
            # cold start: an empty archive has no basis to call anything
            # "first contact", so suppress rather than flag every sender
            return True
        sender = sender.lower()
        targets = {r.lower() for r in recipients}
        for record in self.store.records.values():
            froms = {f"{a.local_part}@{a.domain}".lower() for a in record.email.from_}
            if sender not in froms:
                continue
            tos = {
                f"{a.local_part}@{a.domain}".lower()
                for a in record.email.to + record.email.cc
            }
            if not targets or tos & targets:
                return True
        return False

    def thread_exists(self, normalized_subject: str, references: list) -> bool:
        refs = set(references)
        for record in self.store.records.values():
            if record.email.message_id and record.email.message_id in refs:
                return True
            if normalized_subject and normalize_subject(record.email.subject) == normalized_subject:
                return True
        return False

    def top_display_tokens(self, n: int = 20) -> list:
        counts: dict = {}
        for record in self.store.records.values():
            for addr in record.email.from_:
                if not addr.display_name:
                    continue
                for tok in tokenize(addr.display_name):
                    counts[tok] = counts.get(tok, 0) + 1
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return [tok for tok, _c in ranked[:n]]
