"""Flag: one analyzer finding, the atom of the flagging system."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .ingest import utc_now_rfc3339


@dataclass
class Flag:
    source: str  # analyzer name: rules | intel | classifier | semantic | attachments | pipeline
    severity: int  # 1-100
    reason: str  # short stable code
    evidence: str
    target: str = "email"  # "email" | "attachment:<i>" | "link:<url>"
    created_at: str = field(default_factory=utc_now_rfc3339)

    def __post_init__(self):
        self.severity = min(100, max(1, int(self.severity)))
        if not self.evidence:
            raise ValueError("flag evidence must be non-empty")

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "severity": self.severity,
            "reason": self.reason,
            "evidence": self.evidence,
            "target": self.target,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Flag":
        return cls(
            source=d["source"],
            severity=d["severity"],
            reason=d["reason"],
            evidence=d["evidence"],
            target=d.get("target", "email"),
            created_at=d.get("created_at", ""),
        )


@dataclass
class Verdict:
    classification: str  # benign | spam | malicious
    threat_score: int  # 0-100
    disposition: str  # delivered | quarantined | blocked
    contributing: list = field(default_factory=list)  # (flag index, weight)

    def to_dict(self) -> dict:
        return {
            "classification": self.classification,
            "threat_score": self.threat_score,
            "disposition": self.disposition,
            "contributing": [list(c) for c in self.contributing],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        return cls(
            classification=d["classification"],
            threat_score=d["threat_score"],
            disposition=d["disposition"],
            contributing=[tuple(c) for c in d.get("contributing", [])],
        )


def attachment_target(index: int) -> str:
    return f"attachment:{index}"


def link_target(url: str) -> str:
    return f"link:{url}"
