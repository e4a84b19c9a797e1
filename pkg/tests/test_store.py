import json
import random
import re
import shutil

import pytest

from poststack.emlparse import Address, AttachmentRef, Link, ParsedEmail, strip_html
from poststack.errors import (
    AlreadyFinal,
    DuplicateFinalRecord,
    QuerySyntaxError,
    UnknownEmail,
)
from poststack.flags import Flag, Verdict
from poststack.ingest import IngestReceipt
from poststack.store import EmailRecord, Store, index_tokens, tokenize


def addr(s, display=None):
    local, _, domain = s.partition("@")
    return Address(local, domain, display)


_SEQ = [0]


def make_record(
    body="hello world",
    subject="greetings",
    sender="alice@corp.test",
    to=("bob@corp.test",),
    received="2026-01-15T12:00:00Z",
    html=None,
    links=(),
    attachments=(),
    attachment_texts=(),
    flags=(),
    verdict=None,
    display=None,
    message_id=None,
):
    _SEQ[0] += 1
    eid = f"{_SEQ[0]:064x}"
    email = ParsedEmail(
        email_id=eid,
        from_=[addr(sender, display)],
        to=[addr(t) for t in to],
        subject=subject,
        body_text=body,
        body_html=html,
        message_id=message_id,
        links=[Link(u, "http", u.split("/")[2], "plain_text") for u in links],
        attachments=[
            AttachmentRef(i, "application/octet-stream", "0" * 64, 1, filename=fn)
            for i, fn in enumerate(attachments)
        ],
    )
    return EmailRecord(
        email=email,
        ingest=IngestReceipt(eid, "api", received, False, len(body)),
        flags=list(flags),
        verdict=verdict,
        attachment_texts=list(attachment_texts),
    )


@pytest.fixture
def store(tmp_path):
    s = Store(tmp_path)
    yield s
    s.close()


# ---------------------------------------------------------------------------
# basic persistence

def test_put_get_round_trip(store):
    r = make_record()
    store.put_record(r)
    got = store.get(r.email_id)
    assert got.to_dict() == r.to_dict()


def test_unknown_email(store):
    with pytest.raises(UnknownEmail):
        store.get("f" * 64)


def test_overwrite_before_final_allowed(store):
    r = make_record(body="first version draft")
    store.put_record(r)
    r2 = EmailRecord.from_dict(r.to_dict())
    r2.email.body_text = "second version final"
    store.put_record(r2)
    assert store.search("draft").total_count == 0
    assert store.search("second").total_count == 1


def test_duplicate_after_final_rejected(store):
    r = make_record()
    store.put_record(r)
    store.finalize_verdict(r.email_id, Verdict("benign", 0, "delivered"))
    with pytest.raises(DuplicateFinalRecord):
        store.put_record(r)


def test_append_flags_in_order_then_finalize(store):
    r = make_record()
    store.put_record(r)
    for i in range(3):
        store.append_flag(r.email_id, Flag("rules", 10 + i, f"r{i}", f"evidence {i}"))
    store.finalize_verdict(r.email_id, Verdict("spam", 45, "quarantined"))
    got = store.get(r.email_id)
    assert [f.reason for f in got.flags] == ["r0", "r1", "r2"]
    with pytest.raises(AlreadyFinal):
        store.append_flag(r.email_id, Flag("rules", 1, "late", "too late"))
    with pytest.raises(AlreadyFinal):
        store.finalize_verdict(r.email_id, Verdict("benign", 0, "delivered"))


def test_finalized_verdict_searchable(store):
    r = make_record()
    store.put_record(r)
    store.finalize_verdict(r.email_id, Verdict("malicious", 90, "blocked"))
    result = store.search("verdict:malicious")
    assert [h.email_id for h in result.hits] == [r.email_id]


# ---------------------------------------------------------------------------
# tokenizer / indexing

def test_tokenizer_definition():
    assert tokenize("Wire-transfer NOW") == ["wire", "transfer", "now"]
    assert tokenize("a b cc") == ["cc"]  # 1-char tokens dropped


def test_address_indexed_whole_and_split(store):
    r = make_record(sender="bob@corp.test")
    store.put_record(r)
    for q in ("bob", "corp", "from:bob@corp.test", "bob@corp.test"):
        assert store.search(q).total_count == 1, q


def test_index_covers_all_fields():
    r = make_record(
        body="body words",
        subject="subj line",
        html="<p>markup text</p>",
        links=("http://host.example/x",),
        attachments=("report.pdf",),
        attachment_texts=[(0, "attached prose")],
        flags=[Flag("rules", 50, "rule:macro_dropper", "e")],
    )
    postings = index_tokens(r)
    assert "subj" in postings["subject"]
    assert "words" in postings["body"]
    assert "markup" in postings["body"]  # stripped html
    assert "host" in postings["link"]
    assert "report" in postings["attachment"]
    assert "prose" in postings["attachment"]
    assert "macro" in postings["flag"]


def test_flag_appended_after_put_is_searchable(store):
    r = make_record()
    store.put_record(r)
    store.append_flag(r.email_id, Flag("intel", 70, "blocklisted_domain", "e"))
    assert store.search("flag:blocklisted").total_count == 1


# ---------------------------------------------------------------------------
# query language

def seed_corpus(store):
    records = [
        make_record(body="urgent invoice attached", sender="mallory@bad.test",
                    subject="pay now", received="2026-02-01T08:00:00Z"),
        make_record(body="quarterly report inside", sender="alice@corp.test",
                    subject="Q1 report", received="2026-02-02T08:00:00Z",
                    attachments=("q1.pdf",)),
        make_record(body="lunch plans for friday", sender="carol@corp.test",
                    subject="lunch", received="2026-02-03T08:00:00Z"),
    ]
    for r in records:
        store.put_record(r)
    store.finalize_verdict(records[0].email_id, Verdict("malicious", 80, "blocked"))
    store.finalize_verdict(records[1].email_id, Verdict("benign", 0, "delivered"))
    return records


def test_single_term(store):
    records = seed_corpus(store)
    result = store.search("invoice")
    assert [h.email_id for h in result.hits] == [records[0].email_id]


def test_implicit_and_explicit_and(store):
    records = seed_corpus(store)
    a = store.search("from:mallory@bad.test AND verdict:malicious")
    b = store.search("from:mallory@bad.test verdict:malicious")
    assert [h.email_id for h in a.hits] == [h.email_id for h in b.hits] == [records[0].email_id]
    assert store.search("from:alice@corp.test AND verdict:malicious").total_count == 0


def test_phrase_adjacency(store):
    records = seed_corpus(store)
    assert store.search('"urgent invoice"').total_count == 1
    assert store.search('"invoice urgent"').total_count == 0  # order matters
    assert store.search('"urgent attached"').total_count == 0  # not adjacent


def test_or_not_parens(store):
    records = seed_corpus(store)
    ids = {h.email_id for h in store.search("invoice OR lunch").hits}
    assert ids == {records[0].email_id, records[2].email_id}
    ids = {h.email_id for h in store.search("NOT lunch").hits}
    assert ids == {records[0].email_id, records[1].email_id}
    ids = {h.email_id for h in store.search("(invoice OR lunch) AND NOT verdict:malicious").hits}
    assert ids == {records[2].email_id}


def test_has_attachment_and_dates(store):
    records = seed_corpus(store)
    assert [h.email_id for h in store.search("has:attachment").hits] == [records[1].email_id]
    ids = {h.email_id for h in store.search("date>=2026-02-02").hits}
    assert ids == {records[1].email_id, records[2].email_id}
    ids = {h.email_id for h in store.search("date>=2026-02-02 date<=2026-02-02").hits}
    assert ids == {records[1].email_id}


def test_query_syntax_errors(store):
    for bad in ("", "(invoice", "verdict:weird", "date>=02/02/2026", "AND", "invoice)"):
        with pytest.raises(QuerySyntaxError) as ei:
            store.search(bad)
        assert isinstance(ei.value.position, int)


def test_snippet_contains_matched_term(store):
    r = make_record(body="x" * 200 + " the secret invoice word " + "y" * 200)
    store.put_record(r)
    [hit] = store.search("invoice").hits
    assert "invoice" in hit.snippet
    assert len(hit.snippet) <= 80


def test_sort_order_and_determinism(store):
    # same score: newer received_at first, then email_id ascending
    a = make_record(body="token alpha", received="2026-03-01T00:00:00Z")
    b = make_record(body="token beta", received="2026-03-02T00:00:00Z")
    c = make_record(body="token token gamma", received="2026-01-01T00:00:00Z")
    for r in (a, b, c):
        store.put_record(r)
    hits = store.search("token").hits
    assert [h.email_id for h in hits] == [b.email_id, a.email_id, c.email_id]
    # score desc beats recency: two matched terms outrank one
    hits = store.search("token gamma").hits
    assert hits[0].email_id == c.email_id


# ---------------------------------------------------------------------------
# pagination

def test_pagination_complete_no_dups(store):
    for i in range(25):
        store.put_record(make_record(body=f"common word {i}", received=f"2026-01-{i+1:02d}T00:00:00Z"))
    full = [h.email_id for h in store.search("common", limit=200).hits]
    assert len(full) == 25
    paged = []
    cursor = None
    while True:
        result = store.search("common", limit=7, cursor=cursor)
        paged.extend(h.email_id for h in result.hits)
        if result.next_cursor is None:
            break
        cursor = result.next_cursor
    assert paged == full


def test_limit_clamped(store):
    for i in range(5):
        store.put_record(make_record(body="clamp me"))
    assert len(store.search("clamp", limit=99999).hits) == 5
    assert len(store.search("clamp", limit=2).hits) == 2


# ---------------------------------------------------------------------------
# durability / rebuild

def test_durable_across_reopen(tmp_path):
    s = Store(tmp_path)
    r = make_record(body="survives restart")
    s.put_record(r)
    s.append_flag(r.email_id, Flag("intel", 60, "blocklisted_sender", "e"))
    s.finalize_verdict(r.email_id, Verdict("spam", 60, "quarantined"))
    # no clean close: simulate a process kill
    s2 = Store(tmp_path)
    got = s2.get(r.email_id)
    assert got.verdict.classification == "spam"
    assert [f.reason for f in got.flags] == ["blocklisted_sender"]
    assert s2.search("survives").total_count == 1
    s.close()
    s2.close()


def test_index_dir_deletable(tmp_path):
    s = Store(tmp_path)
    records = seed_corpus(s)
    s.save_snapshot()
    baseline = {q: [h.email_id for h in s.search(q).hits]
                for q in ("invoice", "verdict:malicious", '"quarterly report"', "NOT lunch")}
    s.close()
    shutil.rmtree(tmp_path / "index")
    s2 = Store(tmp_path)
    for q, want in baseline.items():
        assert [h.email_id for h in s2.search(q).hits] == want, q
    s2.close()


def test_corrupt_snapshot_falls_back_to_journal(tmp_path):
    s = Store(tmp_path)
    r = make_record(body="snapshot victim")
    s.put_record(r)
    s.save_snapshot()
    s.close()
    (tmp_path / "index" / "snapshot-0001.bin").write_text("{not json")
    s2 = Store(tmp_path)
    assert s2.search("victim").total_count == 1
    s2.close()


def test_journal_replay_after_partial_crash(tmp_path):
    """A line fsynced to the journal but never applied in memory (crash
    between write and index) must be visible after recovery."""
    s = Store(tmp_path)
    s.put_record(make_record(body="normal path"))
    s.close()
    crashed = make_record(body="crashed before indexing")
    with open(tmp_path / "records" / "journal-0001.jsonl", "a") as fh:
        fh.write(json.dumps({"op": "put", "record": crashed.to_dict()}) + "\n")
    s2 = Store(tmp_path)
    assert s2.search("crashed").total_count == 1
    assert len(s2) == 2
    s2.close()


def test_corrupt_journal_line_skipped(tmp_path):
    s = Store(tmp_path)
    s.put_record(make_record(body="good record"))
    s.close()
    with open(tmp_path / "records" / "journal-0001.jsonl", "a") as fh:
        fh.write("{truncated garbage\n")
    s2 = Store(tmp_path)
    assert s2.search("good").total_count == 1
    s2.close()


# ---------------------------------------------------------------------------
# linear-scan oracle

WORDS = ["invoice", "urgent", "report", "lunch", "wire", "budget", "meeting",
         "password", "reset", "友", "q3", "deck", "review", "offsite"]
SENDERS = ["alice@corp.test", "bob@corp.test", "mallory@bad.test", "carol@x.example"]


class OracleEval:
    """Independent query evaluator: linear scan over records, field texts
    and tokens derived straight from the indexing definition."""

    TOKEN_RE = re.compile(r"[a-z0-9]{2,}")

    def __init__(self, records):
        self.records = records

    def field_tokens(self, record):
        email = record.email
        body = []
        if email.body_text:
            body.extend(self.TOKEN_RE.findall(email.body_text.lower()))
        if email.body_html:
            body.extend(self.TOKEN_RE.findall(strip_html(email.body_html).lower()))
        froms = [f"{a.local_part}@{a.domain}".lower() for a in email.from_]
        tos = [f"{a.local_part}@{a.domain}".lower() for a in email.to + email.cc]
        out = {
            "subject": self.TOKEN_RE.findall(email.subject.lower()),
            "body": body,
            "from": [t for a in froms for t in self.TOKEN_RE.findall(a)] + froms,
            "to": [t for a in tos for t in self.TOKEN_RE.findall(a)] + tos,
            "attachment": [
                t for a in email.attachments
                for t in self.TOKEN_RE.findall((a.filename or "").lower())
            ] + [t for _i, txt in record.attachment_texts
                 for t in self.TOKEN_RE.findall(txt.lower())],
            "flag": [t for f in record.flags for t in self.TOKEN_RE.findall(f.reason.lower())],
            "link": [t for l in email.links for t in self.TOKEN_RE.findall(l.host.lower())],
        }
        return out

    def matches(self, record, q):
        kind = q[0]
        if kind == "term":
            _k, fname, token = q
            ft = self.field_tokens(record)
            fields = [fname] if fname else list(ft)
            return any(token in ft[f] for f in fields)
        if kind == "phrase":
            _k, fname, tokens = q
            ft = self.field_tokens(record)
            fields = [fname] if fname else list(ft)
            for f in fields:
                seq = ft[f]
                for i in range(len(seq) - len(tokens) + 1):
                    if seq[i : i + len(tokens)] == list(tokens):
                        return True
            return False
        if kind == "verdict":
            return record.verdict is not None and record.verdict.classification == q[1]
        if kind == "has_attachment":
            return bool(record.email.attachments)
        if kind == "date":
            _k, op, day = q
            actual = record.ingest.received_at[:10]
            return actual >= day if op == ">=" else actual <= day
        if kind == "and":
            return all(self.matches(record, p) for p in q[1])
        if kind == "or":
            return any(self.matches(record, p) for p in q[1])
        if kind == "not":
            return not self.matches(record, q[1])
        raise AssertionError(q)

    def score(self, record, q):
        kind = q[0]
        if kind in ("term", "phrase", "verdict", "has_attachment", "date"):
            return 1 if self.matches(record, q) else 0
        if kind == "not":
            return 0
        return sum(self.score(record, p) for p in q[1])

    def search_ids(self, q):
        keyed = [
            (self.score(r, q), r.ingest.received_at, r.email_id)
            for r in self.records
            if self.matches(r, q)
        ]
        keyed.sort(key=lambda k: (-k[0], [-ord(c) for c in k[1]], k[2]))
        return [eid for _s, _d, eid in keyed]


def render_query(q):
    kind = q[0]
    if kind == "term":
        return f"{q[1]}:{q[2]}" if q[1] else q[2]
    if kind == "phrase":
        body = " ".join(q[2])
        return f'{q[1]}:"{body}"' if q[1] else f'"{body}"'
    if kind == "verdict":
        return f"verdict:{q[1]}"
    if kind == "has_attachment":
        return "has:attachment"
    if kind == "date":
        return f"date{q[1]}{q[2]}"
    if kind == "and":
        return " AND ".join(f"({render_query(p)})" for p in q[1])
    if kind == "or":
        return " OR ".join(f"({render_query(p)})" for p in q[1])
    if kind == "not":
        return f"NOT ({render_query(q[1])})"
    raise AssertionError(q)


def random_structured_query(rng, depth=0):
    choices = ["term", "fterm", "phrase", "verdict", "has", "date"]
    if depth < 2:
        choices += ["and", "or", "not"] * 2
    kind = rng.choice(choices)
    if kind == "term":
        return ("term", None, rng.choice(WORDS[:9]))
    if kind == "fterm":
        f = rng.choice(["subject", "body", "from", "to"])
        if f in ("from", "to") and rng.random() < 0.5:
            return ("term", f, rng.choice(SENDERS))
        return ("term", f, rng.choice(WORDS[:9]))
    if kind == "phrase":
        # ASCII-only vocab: the query language tokenizes phrases to [a-z0-9]
        # runs, so a non-ASCII word here would be silently dropped
        n = rng.randint(2, 3)
        start = rng.randrange(9 - n)
        return ("phrase", rng.choice([None, "body"]), tuple(WORDS[start : start + n]))
    if kind == "verdict":
        return ("verdict", rng.choice(["benign", "spam", "malicious"]))
    if kind == "has":
        return ("has_attachment",)
    if kind == "date":
        return ("date", rng.choice([">=", "<="]), f"2026-01-{rng.randint(1, 28):02d}")
    if kind == "not":
        return ("not", random_structured_query(rng, depth + 1))
    parts = tuple(random_structured_query(rng, depth + 1) for _ in range(rng.randint(2, 3)))
    return (kind, parts)


def random_record(rng, i):
    body = " ".join(rng.choice(WORDS) for _ in range(rng.randint(0, 12)))
    subject = " ".join(rng.choice(WORDS) for _ in range(rng.randint(0, 3)))
    kwargs = dict(
        body=body,
        subject=subject,
        sender=rng.choice(SENDERS),
        to=tuple(rng.sample(SENDERS, rng.randint(1, 2))),
        received=f"2026-01-{rng.randint(1, 28):02d}T{rng.randint(0, 23):02d}:00:00Z",
    )
    if rng.random() < 0.3:
        kwargs["attachments"] = ("notes.txt",)
        kwargs["attachment_texts"] = [(0, " ".join(rng.choice(WORDS) for _ in range(4)))]
    if rng.random() < 0.3:
        kwargs["html"] = "<p>" + " ".join(rng.choice(WORDS) for _ in range(5)) + "</p>"
    if rng.random() < 0.4:
        kwargs["flags"] = [Flag("rules", 50, f"rule:{rng.choice(WORDS[:5])}", "e")]
    r = make_record(**kwargs)
    if rng.random() < 0.6:
        r.verdict = Verdict(rng.choice(["benign", "spam", "malicious"]), rng.randint(0, 100),
                            "delivered")
    return r


def test_search_matches_linear_scan_oracle(tmp_path):
    rng = random.Random(20260823)
    s = Store(tmp_path)
    records = [random_record(rng, i) for i in range(200)]
    for r in records:
        s.put_record(r)
    oracle = OracleEval(list(s.records.values()))
    for qi in range(100):
        q = random_structured_query(rng)
        text = render_query(q)
        want = oracle.search_ids(q)
        got = [h.email_id for h in s.search(text, limit=200).hits]
        assert got == want, f"query {qi}: {text}"
    s.close()


# ---------------------------------------------------------------------------
# history view

def test_store_history(tmp_path):
    s = Store(tmp_path)
    s.put_record(make_record(sender="alice@corp.test", to=("bob@corp.test",),
                             subject="Q3 budget", display="Alice Liddell",
                             message_id="<orig@corp.test>"))
    s.put_record(make_record(sender="alice@corp.test", to=("bob@corp.test",),
                             display="Alice Liddell"))
    h = s.history()
    assert h.sender_known("alice@corp.test", ["bob@corp.test"])
    assert not h.sender_known("alice@corp.test", ["stranger@x.example"])
    assert not h.sender_known("mallory@bad.test", ["bob@corp.test"])
    assert h.thread_exists("q3 budget", [])
    assert h.thread_exists("different words", ["<orig@corp.test>"])
    assert not h.thread_exists("never seen", [])
    assert "alice" in h.top_display_tokens()
    s.close()
