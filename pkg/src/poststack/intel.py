"""Blocklist intelligence: load line-oriented blocklists and check
URLs, hosts and senders against them.

File format, one entry per line:

    domain evil.test [severity]
    url http://evil.test/path [severity]
    cidr 10.0.0.0/8 [severity]
    sender mallory@bad.test [severity]

"#" comments and blank lines are ignored; malformed lines are skipped
and counted.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .emlparse import Address, Link, normalize_url
from .flags import Flag, link_target

logger = logging.getLogger(__name__)

DEFAULT_SEVERITIES = {"domain": 70, "url": 70, "cidr": 70, "sender": 60}

_IPV4_RE = re.compile(r"^(\d{1,3})\.(\d{1,3})\.(\d{1,3})\.(\d{1,3})$")


def parse_ipv4(text: str) -> Optional[int]:
    m = _IPV4_RE.match(text)
    if m is None:
        return None
    octets = [int(g) for g in m.groups()]
    if any(o > 255 for o in octets):
        return None
    return (octets[0] << 24) | (octets[1] << 16) | (octets[2] << 8) | octets[3]


def cidr_contains(base: int, prefix: int, ip: int) -> bool:
    if prefix == 0:
        return True
    mask = ((1 << prefix) - 1) << (32 - prefix)
    return (ip & mask) == (base & mask)


@dataclass
class Blocklist:
    source_name: str = "blocklist"
    domains: dict = field(default_factory=dict)  # suffix -> severity
    urls: dict = field(default_factory=dict)  # normalized url -> severity
    cidrs: list = field(default_factory=list)  # (base, prefix, severity, text)
    senders: dict = field(default_factory=dict)  # address -> severity
    malformed_count: int = 0

    def __len__(self) -> int:
        return len(self.domains) + len(self.urls) + len(self.cidrs) + len(self.senders)


def load_blocklist(path) -> Blocklist:
    path = Path(path)
    bl = Blocklist(source_name=path.name)
    for line in path.read_text("utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        kind = parts[0].lower()
        if len(parts) < 2 or kind not in DEFAULT_SEVERITIES:
            bl.malformed_count += 1
            continue
        value = parts[1]
        severity = DEFAULT_SEVERITIES[kind]
        if len(parts) >= 3:
            try:
                severity = min(100, max(1, int(parts[2])))
            except ValueError:
                bl.malformed_count += 1
                continue
        if kind == "domain":
            dom = value.lower().strip(".")
            if "/" in dom or "://" in dom or not dom:
                bl.malformed_count += 1
                continue
            bl.domains[dom] = severity
        elif kind == "url":
            norm = normalize_url(value)
            if norm is None:
                bl.malformed_count += 1
                continue
            bl.urls[norm[0]] = severity
        elif kind == "cidr":
            base_s, sep, prefix_s = value.partition("/")
            base = parse_ipv4(base_s)
            try:
                prefix = int(prefix_s) if sep else 32
            except ValueError:
                prefix = -1
            if base is None or not (0 <= prefix <= 32):
                bl.malformed_count += 1
                continue
            bl.cidrs.append((base, prefix, severity, value))
        else:  # sender
            if "@" not in value:
                bl.malformed_count += 1
                continue
            bl.senders[value.lower()] = severity
    if len(bl) == 0:
        logger.warning("blocklist %s is empty", path)
    return bl


def domain_hit(host: str, bl: Blocklist) -> Optional[tuple[str, int]]:
    """Suffix match aligned on label boundaries."""
    host = host.lower().strip(".")
    for entry, severity in bl.domains.items():
        if host == entry or host.endswith("." + entry):
            return entry, severity
    return None


def _percent_decode_once(path: str) -> str:
    def sub(m):
        return chr(int(m.group(1), 16))

    return re.sub(r"%([0-9A-Fa-f]{2})", sub, path)


def check_url(link: Link, bl: Blocklist) -> Optional[Flag]:
    host = link.host
    if host.startswith("["):
        logger.warning("IPv6 literal host %s not blocklist-checked (unsupported)", host)
        return None
    if not host.isascii():
        logger.warning("non-ASCII host %s compared without IDN normalization", host)

    # exact URL match, percent-decoding the path once before comparison
    scheme_host, _, path = link.url.partition(host)
    decoded_url = scheme_host + host + _percent_decode_once(path)
    for candidate in (link.url, decoded_url):
        if candidate in bl.urls:
            return Flag(
                source="intel",
                severity=bl.urls[candidate],
                reason="blocklisted_url",
                evidence=f"url {link.url} matches blocklist entry {candidate} ({bl.source_name})",
                target=link_target(link.url),
            )
    hit = domain_hit(host, bl)
    if hit is not None:
        entry, severity = hit
        return Flag(
            source="intel",
            severity=severity,
            reason="blocklisted_domain",
            evidence=f"host {host} matches blocklist domain {entry} ({bl.source_name})",
            target=link_target(link.url),
        )
    ip = parse_ipv4(host)
    if ip is not None:
        for base, prefix, severity, text in bl.cidrs:
            if cidr_contains(base, prefix, ip):
                return Flag(
                    source="intel",
                    severity=severity,
                    reason="blocklisted_cidr",
                    evidence=f"host {host} inside blocklisted range {text} ({bl.source_name})",
                    target=link_target(link.url),
                )
    return None


def check_sender(addr: Optional[Address], envelope_from: Optional[str], bl: Blocklist) -> Optional[Flag]:
    candidates = []
    if addr is not None:
        candidates.append(("header From", addr.address.lower(), addr.domain))
    if envelope_from:
        env = envelope_from.lower()
        env_domain = env.rpartition("@")[2]
        candidates.append(("envelope sender", env, env_domain))
    for label, address, domain in candidates:
        if address in bl.senders:
            return Flag(
                source="intel",
                severity=bl.senders[address],
                reason="blocklisted_sender",
                evidence=f"{label} {address} matches blocklist entry ({bl.source_name})",
            )
        hit = domain_hit(domain, bl) if domain else None
        if hit is not None:
            entry, severity = hit
            return Flag(
                source="intel",
                severity=severity,
                reason="blocklisted_sender_domain",
                evidence=f"{label} {address} has blocklisted domain {entry} ({bl.source_name})",
            )
    return None


def load_blocklist_dir(path) -> Blocklist:
    """Merge every *.txt blocklist in a directory into one."""
    merged = Blocklist(source_name="merged")
    p = Path(path)
    if not p.is_dir():
        return merged
    for fp in sorted(p.glob("*.txt")):
        bl = load_blocklist(fp)
        merged.domains.update(bl.domains)
        merged.urls.update(bl.urls)
        merged.cidrs.extend(bl.cidrs)
        merged.senders.update(bl.senders)
        merged.malformed_count += bl.malformed_count
    return merged
