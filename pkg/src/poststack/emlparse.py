"""Tolerant .eml parser: headers, encoded-words, MIME tree, bodies,
links, addresses, attachments.

Forensic stance: never refuse hostile input. Anything malformed is
decoded as far as possible and the damage recorded in parse_warnings.
"""

from __future__ import annotations

import hashlib
import logging
import math
import re
from dataclasses import dataclass, field
from email.utils import parsedate_to_datetime
from datetime import timezone
from typing import Optional

from .errors import EmptyMessage, MalformedEncodedWord

logger = logging.getLogger(__name__)

MAX_MIME_DEPTH = 16
MAX_DECODED_TOTAL = 100 * 1024 * 1024

KNOWN_CHARSETS = {"utf-8", "utf8", "us-ascii", "ascii", "iso-8859-1", "latin-1", "windows-1252", "cp1252"}

_CHARSET_ALIASES = {
    "utf8": "utf-8",
    "ascii": "us-ascii",
    "latin-1": "iso-8859-1",
    "cp1252": "windows-1252",
}


# ---------------------------------------------------------------------------
# domain types

@dataclass
class Address:
    local_part: str
    domain: str
    display_name: Optional[str] = None

    @property
    def address(self) -> str:
        return f"{self.local_part}@{self.domain}" if self.domain else self.local_part

    def to_dict(self) -> dict:
        return {
            "display_name": self.display_name,
            "local_part": self.local_part,
            "domain": self.domain,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Address":
        return cls(d["local_part"], d["domain"], d.get("display_name"))


@dataclass
class Link:
    url: str
    scheme: str
    host: str
    origin: str  # html_href | plain_text | qr_code
    display_text: Optional[str] = None
    display_mismatch: bool = False

    def to_dict(self) -> dict:
        return {
            "url": self.url,
            "scheme": self.scheme,
            "host": self.host,
            "origin": self.origin,
            "display_text": self.display_text,
            "display_mismatch": self.display_mismatch,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Link":
        return cls(d["url"], d["scheme"], d["host"], d["origin"], d.get("display_text"), d.get("display_mismatch", False))


@dataclass
class AttachmentRef:
    index: int
    declared_mime: str
    sha256: str
    size: int
    filename: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "filename": self.filename,
            "declared_mime": self.declared_mime,
            "sha256": self.sha256,
            "size": self.size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttachmentRef":
        return cls(d["index"], d["declared_mime"], d["sha256"], d["size"], d.get("filename"))


@dataclass
class ParsedEmail:
    email_id: str
    headers: list = field(default_factory=list)  # (name, raw value, decoded value)
    from_: list = field(default_factory=list)
    to: list = field(default_factory=list)
    cc: list = field(default_factory=list)
    reply_to: list = field(default_factory=list)
    subject: str = ""
    date: Optional[str] = None  # RFC 3339 UTC
    message_id: Optional[str] = None
    body_text: Optional[str] = None
    body_html: Optional[str] = None
    links: list = field(default_factory=list)
    attachments: list = field(default_factory=list)
    parse_warnings: list = field(default_factory=list)
    encoded_word_count: int = 0
    attachment_payloads: list = field(default_factory=list, repr=False)

    def header(self, name: str) -> Optional[str]:
        """Case-insensitive lookup of the first decoded header value."""
        lname = name.lower()
        for n, _raw, dec in self.headers:
            if n.lower() == lname:
                return dec
        return None

    def header_all(self, name: str) -> list:
        lname = name.lower()
        return [dec for n, _raw, dec in self.headers if n.lower() == lname]

    def to_dict(self) -> dict:
        return {
            "email_id": self.email_id,
            "headers": [list(h) for h in self.headers],
            "from": [a.to_dict() for a in self.from_],
            "to": [a.to_dict() for a in self.to],
            "cc": [a.to_dict() for a in self.cc],
            "reply_to": [a.to_dict() for a in self.reply_to],
            "subject": self.subject,
            "date": self.date,
            "message_id": self.message_id,
            "body_text": self.body_text,
            "body_html": self.body_html,
            "links": [l.to_dict() for l in self.links],
            "attachments": [a.to_dict() for a in self.attachments],
            "parse_warnings": list(self.parse_warnings),
            "encoded_word_count": self.encoded_word_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParsedEmail":
        return cls(
            email_id=d["email_id"],
            headers=[tuple(h) for h in d.get("headers", [])],
            from_=[Address.from_dict(x) for x in d.get("from", [])],
            to=[Address.from_dict(x) for x in d.get("to", [])],
            cc=[Address.from_dict(x) for x in d.get("cc", [])],
            reply_to=[Address.from_dict(x) for x in d.get("reply_to", [])],
            subject=d.get("subject", ""),
            date=d.get("date"),
            message_id=d.get("message_id"),
            body_text=d.get("body_text"),
            body_html=d.get("body_html"),
            links=[Link.from_dict(x) for x in d.get("links", [])],
            attachments=[AttachmentRef.from_dict(x) for x in d.get("attachments", [])],
            parse_warnings=list(d.get("parse_warnings", [])),
            encoded_word_count=d.get("encoded_word_count", 0),
        )


# ---------------------------------------------------------------------------
# low-level decoders (own implementations; stdlib versions serve as the
# independent oracle in the test suite)

_B64_ALPHABET = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/"
_B64_VALUES = {c: i for i, c in enumerate(_B64_ALPHABET)}


def decode_base64(data: str, strict: bool = False) -> bytes:
    """Base64 decode. Tolerant mode drops anything outside the alphabet;
    strict mode raises ValueError on foreign characters."""
    acc = 0
    nbits = 0
    out = bytearray()
    for ch in data:
        if ch in _B64_VALUES:
            acc = (acc << 6) | _B64_VALUES[ch]
            nbits += 6
            if nbits >= 8:
                nbits -= 8
                out.append((acc >> nbits) & 0xFF)
        elif ch == "=" or ch.isspace():
            continue
        elif strict:
            raise ValueError(f"invalid base64 character {ch!r}")
    return bytes(out)


_HEX = "0123456789ABCDEFabcdef"


def decode_quoted_printable(data: str, header_mode: bool = False) -> bytes:
    """Quoted-printable decode; header_mode applies the RFC 2047 Q rules
    (underscore means space, no soft line breaks)."""
    out = bytearray()
    i = 0
    n = len(data)
    while i < n:
        ch = data[i]
        if ch == "=":
            if not header_mode:
                if data[i + 1 : i + 3] == "\r\n":  # soft line break
                    i += 3
                    continue
                if data[i + 1 : i + 2] == "\n":
                    i += 2
                    continue
            pair = data[i + 1 : i + 3]
            if len(pair) == 2 and pair[0] in _HEX and pair[1] in _HEX:
                out.append(int(pair, 16))
                i += 3
                continue
            out.append(ord("="))
            i += 1
        elif header_mode and ch == "_":
            out.append(0x20)
            i += 1
        else:
            # input is a latin-1 view of the raw bytes; keep byte values
            code = ord(ch)
            out.append(code if code < 256 else 0x3F)
            i += 1
    return bytes(out)


def decode_charset(data: bytes, charset: str, warnings: Optional[list] = None, what: str = "body") -> str:
    cs = (charset or "us-ascii").lower().strip()
    cs = _CHARSET_ALIASES.get(cs, cs)
    if cs not in ("utf-8", "us-ascii", "iso-8859-1", "windows-1252"):
        if warnings is not None:
            warnings.append(f"unsupported charset {charset!r} in {what}; decoded lossily")
        cs = "utf-8"
    codec = "ascii" if cs == "us-ascii" else cs
    try:
        return data.decode(codec)
    except (UnicodeDecodeError, LookupError):
        if warnings is not None:
            warnings.append(f"undecodable bytes in {what} ({charset}); replaced")
        return data.decode(codec, "replace")


_ENCODED_WORD_RE = re.compile(r"=\?([^?]+)\?([A-Za-z])\?([^? ]*)\?=")


def decode_encoded_word(token: str) -> str:
    """Decode one RFC 2047 encoded-word (=?charset?B/Q?payload?=)."""
    m = _ENCODED_WORD_RE.fullmatch(token)
    if m is None:
        raise MalformedEncodedWord(f"not an encoded-word: {token!r}")
    charset, enc, payload = m.group(1), m.group(2).upper(), m.group(3)
    if enc == "B":
        try:
            raw = decode_base64(payload, strict=True)
        except ValueError as exc:
            raise MalformedEncodedWord(str(exc)) from exc
    elif enc == "Q":
        raw = decode_quoted_printable(payload, header_mode=True)
    else:
        raise MalformedEncodedWord(f"unknown encoding {enc!r}")
    return decode_charset(raw, charset, None, "encoded-word")


def decode_header_value(raw: str, warnings: Optional[list] = None) -> tuple[str, int]:
    """Decode all encoded-words inside a header value.

    Returns (decoded value, encoded-word count). Whitespace between two
    adjacent encoded-words is dropped per RFC 2047.
    """
    parts = []
    count = 0
    pos = 0
    last_was_ew = False
    for m in _ENCODED_WORD_RE.finditer(raw):
        gap = raw[pos : m.start()]
        try:
            decoded = decode_encoded_word(m.group(0))
        except MalformedEncodedWord:
            if warnings is not None:
                warnings.append(f"malformed encoded-word kept raw: {m.group(0)!r}")
            parts.append(gap)
            parts.append(m.group(0))
            pos = m.end()
            last_was_ew = False
            continue
        if last_was_ew and gap.strip() == "":
            gap = ""
        parts.append(gap)
        parts.append(decoded)
        count += 1
        pos = m.end()
        last_was_ew = True
    parts.append(raw[pos:])
    return "".join(parts), count


# ---------------------------------------------------------------------------
# header block

def split_message(raw: bytes) -> tuple[bytes, bytes]:
    """Split at the first blank line; tolerates bare-LF messages."""
    for sep in (b"\r\n\r\n", b"\n\n"):
        idx = raw.find(sep)
        if idx >= 0:
            return raw[:idx], raw[idx + len(sep):]
    return raw, b""


def parse_header_block(block: bytes, warnings: list) -> list:
    """Unfold and split the header block into (name, raw, decoded)."""
    text = decode_charset(block, "utf-8", warnings, "headers")
    lines = text.splitlines()
    unfolded: list[str] = []
    for line in lines:
        if line[:1] in (" ", "\t") and unfolded:
            unfolded[-1] += " " + line.strip()
        else:
            unfolded.append(line)
    headers = []
    for line in unfolded:
        if not line.strip():
            continue
        name, sep, value = line.partition(":")
        if not sep or not name or any(c.isspace() for c in name.strip()):
            warnings.append(f"unparseable header line: {line[:60]!r}")
            continue
        raw_value = value.strip()
        decoded, _n = decode_header_value(raw_value, warnings)
        headers.append((name.strip(), raw_value, decoded))
    return headers


# ---------------------------------------------------------------------------
# content-type / MIME tree

@dataclass
class MimePart:
    headers: list
    body: bytes
    children: list = field(default_factory=list)

    def header(self, name: str) -> Optional[str]:
        lname = name.lower()
        for n, _raw, dec in self.headers:
            if n.lower() == lname:
                return dec
        return None


def parse_content_type(value: Optional[str]) -> tuple[str, dict]:
    """Parse 'type/subtype; k=v; ...' tolerantly; defaults to text/plain."""
    if not value:
        return "text/plain", {}
    segs = _split_respecting_quotes(value, ";")
    ctype = segs[0].strip().lower() or "text/plain"
    params: dict[str, str] = {}
    for seg in segs[1:]:
        k, sep, v = seg.partition("=")
        if not sep:
            continue
        v = v.strip()
        if len(v) >= 2 and v[0] == '"' and v[-1] == '"':
            v = v[1:-1]
        params[k.strip().lower()] = v
    return ctype, params


def _split_respecting_quotes(value: str, sep: str) -> list:
    out = []
    cur = []
    in_quote = False
    depth = 0
    for ch in value:
        if ch == '"':
            in_quote = not in_quote
            cur.append(ch)
        elif ch == "(" and not in_quote:
            depth += 1
            cur.append(ch)
        elif ch == ")" and not in_quote and depth > 0:
            depth -= 1
            cur.append(ch)
        elif ch == sep and not in_quote and depth == 0:
            out.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    out.append("".join(cur))
    return out


def _split_multipart(body: bytes, boundary: str, warnings: list) -> list:
    delim = b"--" + boundary.encode("utf-8", "replace")
    parts: list[bytes] = []
    lines = body.split(b"\n")
    current: Optional[list] = None
    closed = False
    for line in lines:
        stripped = line.rstrip(b"\r")
        if stripped == delim:
            if current is not None:
                parts.append(b"\r\n".join(current))
            current = []
        elif stripped == delim + b"--":
            if current is not None:
                parts.append(b"\r\n".join(current))
            current = None
            closed = True
            break
        elif current is not None:
            current.append(stripped)
    if current is not None:
        parts.append(b"\r\n".join(current))
        warnings.append("multipart body missing closing boundary")
    elif not closed and not parts:
        warnings.append("multipart body contains no boundary lines")
    return parts


def build_mime_tree(headers: list, body: bytes, warnings: list, depth: int = 0) -> MimePart:
    part = MimePart(headers=headers, body=body)
    ctype, params = parse_content_type(part.header("Content-Type"))
    if ctype.startswith("multipart/"):
        boundary = params.get("boundary")
        if not boundary:
            warnings.append("multipart part without boundary; treated as opaque")
            return part
        if depth >= MAX_MIME_DEPTH:
            warnings.append(f"MIME depth cap {MAX_MIME_DEPTH} reached; subtree not expanded")
            return part
        for chunk in _split_multipart(body, boundary, warnings):
            child_hdr_block, child_body = split_message(chunk)
            child_headers = parse_header_block(child_hdr_block, warnings)
            part.children.append(build_mime_tree(child_headers, child_body, warnings, depth + 1))
    return part


def decode_part_body(part: MimePart, warnings: list) -> bytes:
    cte = (part.header("Content-Transfer-Encoding") or "7bit").strip().lower()
    if cte == "base64":
        return decode_base64(part.body.decode("ascii", "replace"))
    if cte == "quoted-printable":
        return decode_quoted_printable(part.body.decode("latin-1"))
    if cte not in ("7bit", "8bit", "binary", ""):
        warnings.append(f"unknown content-transfer-encoding {cte!r}; passed through")
    return part.body


# ---------------------------------------------------------------------------
# links

_URL_RE = re.compile(r"https?://[^\s<>\"')\]}]+", re.IGNORECASE)
_ANCHOR_RE = re.compile(
    r"<a\b[^>]*\bhref\s*=\s*(\"[^\"]*\"|'[^']*'|[^\s>]+)[^>]*>(.*?)</a\s*>",
    re.IGNORECASE | re.DOTALL,
)
_TAG_RE = re.compile(r"<[^>]+>")
_HOSTNAME_RE = re.compile(r"^(?:[a-z0-9_-]+\.)+[a-z]{2,}$", re.IGNORECASE)

DEFAULT_PORTS = {"http": 80, "https": 443}


def strip_html(html: str) -> str:
    """Crude tag removal for indexing/snippets; not a sanitizer."""
    text = re.sub(r"(?is)<(script|style)\b.*?</\1\s*>", " ", html)
    text = _TAG_RE.sub(" ", text)
    text = text.replace("&nbsp;", " ").replace("&amp;", "&").replace("&lt;", "<")
    text = text.replace("&gt;", ">").replace("&quot;", '"').replace("&#39;", "'")
    return re.sub(r"\s+", " ", text).strip()


def normalize_url(candidate: str) -> Optional[tuple[str, str, str]]:
    """Normalize a URL; returns (url, scheme, host) or None.

    Scheme and host are lowercased, default ports stripped, empty path
    becomes "/". Idempotent by construction.
    """
    m = re.match(r"^([A-Za-z][A-Za-z0-9+.-]*)://([^/?#]+)([^#]*)(#.*)?$", candidate.strip())
    if m is None:
        return None
    scheme = m.group(1).lower()
    authority = m.group(2)
    rest = m.group(3) or ""
    userinfo = ""
    if "@" in authority:
        userinfo, authority = authority.rsplit("@", 1)
        userinfo += "@"
    host = authority
    port = ""
    if host.startswith("["):  # IPv6 literal
        end = host.find("]")
        if end >= 0 and len(host) > end + 1 and host[end + 1] == ":":
            port = host[end + 2 :]
            host = host[: end + 1]
    elif ":" in host:
        host, _, port = host.rpartition(":")
    host = host.lower()
    if not host:
        return None
    portpart = ""
    if port:
        try:
            pnum = int(port)
        except ValueError:
            return None
        if DEFAULT_PORTS.get(scheme) != pnum:
            portpart = f":{pnum}"
    if not rest:
        rest = "/"
    url = f"{scheme}://{userinfo}{host}{portpart}{rest}"
    return url, scheme, host


def registrable_host(host: str) -> str:
    """Last two labels of a hostname; IP literals returned whole."""
    labels = host.lower().rstrip(".").split(".")
    if len(labels) <= 2 or all(l.isdigit() for l in labels):
        return host.lower().rstrip(".")
    return ".".join(labels[-2:])


def _display_mismatch(display_text: Optional[str], host: str) -> bool:
    if not display_text:
        return False
    text = display_text.strip()
    norm = normalize_url(text)
    if norm is not None:
        shown_host = norm[2]
    elif _HOSTNAME_RE.match(text):
        shown_host = text.lower()
    else:
        return False
    return registrable_host(shown_host) != registrable_host(host)


def extract_links(body_text: Optional[str], body_html: Optional[str], warnings: Optional[list] = None) -> list:
    links: list[Link] = []
    seen: set[str] = set()

    def add(candidate: str, origin: str, display_text: Optional[str]) -> None:
        norm = normalize_url(candidate)
        if norm is None:
            if warnings is not None:
                warnings.append(f"unparseable URL skipped: {candidate[:80]!r}")
            return
        url, scheme, host = norm
        if url in seen:
            return
        seen.add(url)
        links.append(
            Link(
                url=url,
                scheme=scheme,
                host=host,
                origin=origin,
                display_text=display_text,
                display_mismatch=_display_mismatch(display_text, host),
            )
        )

    if body_html:
        for m in _ANCHOR_RE.finditer(body_html):
            href = m.group(1)
            if href[:1] in ("'", '"'):
                href = href[1:-1]
            inner = strip_html(m.group(2)) or None
            if href.lower().startswith(("http://", "https://")):
                add(href, "html_href", inner)
        # bare URLs in HTML text content outside anchors
        for m in _URL_RE.finditer(strip_html(_ANCHOR_RE.sub(" ", body_html))):
            add(m.group(0).rstrip(".,;"), "html_href", None)
    if body_text:
        for m in _URL_RE.finditer(body_text):
            add(m.group(0).rstrip(".,;"), "plain_text", None)
    return links


# ---------------------------------------------------------------------------
# addresses

def parse_address_list(header_value: str, warnings: Optional[list] = None) -> list:
    if not header_value or not header_value.strip():
        return []
    out: list[Address] = []
    for mailbox in _split_respecting_quotes(header_value, ","):
        mailbox = mailbox.strip()
        if not mailbox:
            continue
        addr = _parse_mailbox(mailbox)
        if addr is None:
            if warnings is not None:
                warnings.append(f"unparseable mailbox skipped: {mailbox[:60]!r}")
            continue
        out.append(addr)
    return out


_COMMENT_RE = re.compile(r"\([^()]*\)")


def _parse_mailbox(mailbox: str) -> Optional[Address]:
    display = None
    m = re.search(r"<([^<>]*)>", mailbox)
    if m is not None:
        spec = m.group(1).strip()
        display = (mailbox[: m.start()] + mailbox[m.end():]).strip()
        display = _COMMENT_RE.sub("", display).strip()
        if len(display) >= 2 and display[0] == '"' and display[-1] == '"':
            display = display[1:-1].replace('\\"', '"').replace("\\\\", "\\")
        display = display or None
    else:
        spec = _COMMENT_RE.sub("", mailbox).strip()
    if "@" not in spec:
        return None
    local, _, domain = spec.rpartition("@")
    local = local.strip()
    domain = domain.strip().lower()
    if not local or not domain or "@" in domain or any(c.isspace() for c in domain):
        return None
    return Address(local_part=local, domain=domain, display_name=display)


# ---------------------------------------------------------------------------
# top level

def parse_eml(raw: bytes, email_id: Optional[str] = None) -> ParsedEmail:
    if not raw:
        raise EmptyMessage("cannot parse zero-byte message")
    if email_id is None:
        email_id = hashlib.sha256(raw).hexdigest()
    warnings: list[str] = []
    header_block, body = split_message(raw)
    headers = parse_header_block(header_block, warnings)
    if not headers:
        warnings.append("message has no parseable headers")

    email = ParsedEmail(email_id=email_id, headers=headers, parse_warnings=warnings)
    email.encoded_word_count = sum(
        len(_ENCODED_WORD_RE.findall(raw_v)) for _n, raw_v, _d in headers
    )

    email.subject = email.header("Subject") or ""
    email.message_id = email.header("Message-ID")
    date_raw = email.header("Date")
    if date_raw:
        try:
            dt = parsedate_to_datetime(date_raw)
            if dt.tzinfo is None:
                dt = dt.replace(tzinfo=timezone.utc)
            email.date = dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        except (ValueError, TypeError):
            warnings.append(f"unparseable Date header: {date_raw[:40]!r}")

    for attr, name in (("from_", "From"), ("to", "To"), ("cc", "Cc"), ("reply_to", "Reply-To")):
        merged = ", ".join(v for v in email.header_all(name) if v)
        if merged:
            setattr(email, attr, parse_address_list(merged, warnings))

    tree = build_mime_tree(headers, body, warnings)
    _collect_bodies(tree, email, warnings)
    email.links = extract_links(email.body_text, email.body_html, warnings)
    return email


def _collect_bodies(root: MimePart, email: ParsedEmail, warnings: list) -> None:
    total_decoded = 0

    def walk(part: MimePart) -> None:
        nonlocal total_decoded
        if part.children:
            for child in part.children:
                walk(child)
            return
        ctype, params = parse_content_type(part.header("Content-Type"))
        disposition_raw = part.header("Content-Disposition") or ""
        disp_type, disp_params = parse_content_type(disposition_raw)
        filename = disp_params.get("filename") or params.get("name")
        is_attachment = (
            disp_type.startswith("attachment")
            or filename is not None
            or not ctype.startswith("text/")
        )
        payload = decode_part_body(part, warnings)
        total_decoded += len(payload)
        if total_decoded > MAX_DECODED_TOTAL:
            warnings.append("decoded-size cap exceeded; remaining parts skipped")
            return
        if is_attachment:
            idx = len(email.attachments)
            email.attachments.append(
                AttachmentRef(
                    index=idx,
                    filename=filename,
                    declared_mime=ctype,
                    sha256=hashlib.sha256(payload).hexdigest(),
                    size=len(payload),
                )
            )
            email.attachment_payloads.append(payload)
            return
        charset = params.get("charset", "us-ascii")
        text = decode_charset(payload, charset, warnings, f"{ctype} body")
        if ctype == "text/html":
            if email.body_html is None:
                email.body_html = text
        else:
            if email.body_text is None:
                email.body_text = text

    walk(root)


def body_length(email: ParsedEmail) -> int:
    if email.body_text:
        return len(email.body_text)
    if email.body_html:
        return len(strip_html(email.body_html))
    return 0


def log10_length(n: int) -> float:
    return math.log10(n + 1)
