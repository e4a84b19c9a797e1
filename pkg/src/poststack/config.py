"""Runtime configuration.

Loaded from a TOML file (path via --config or the POST_CONFIG env var);
every field has a sensible default so a bare data directory is enough to
start the service.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - python 3.10
    import tomli as tomllib  # type: ignore


DEFAULT_BRANDS = [
    "paypal",
    "microsoft",
    "apple",
    "amazon",
    "google",
    "docusign",
    "office365",
]

URGENCY_LEXICON = [
    "urgent",
    "immediately",
    "verify",
    "suspended",
    "expires",
    "action required",
    "final notice",
]

MONEY_LEXICON = [
    "wire",
    "invoice",
    "payment",
    "gift card",
    "bitcoin",
    "transfer",
]


@dataclass
class SandboxConfig:
    enabled: bool = False
    backend: str = "local-mock"
    base_url: str = ""
    submit_path: str = "/submit"
    result_path: str = "/result"
    timeout_s: float = 60.0
    poll_interval_s: float = 2.0
    fixture_path: str = ""


@dataclass
class VerdictPolicy:
    malicious_score: int = 70
    spam_score: int = 40
    single_flag_override: int = 80
    spam_confidence: float = 0.6
    source_weights: dict = field(
        default_factory=lambda: {
            "rules": 1.0,
            "intel": 1.0,
            "semantic": 0.8,
            "attachments": 1.0,
            "classifier": 1.0,
            "pipeline": 1.0,
            "ingest": 1.0,
        }
    )


@dataclass
class Config:
    data_dir: str = "data"
    config_dir: str = "config"
    smtp_host: str = "127.0.0.1"
    smtp_port: int = 2525
    smtp_max_size: int = 25 * 1024 * 1024
    watch_dir: str = ""
    watch_interval_s: float = 2.0
    api_host: str = "127.0.0.1"
    api_port: int = 8080
    api_token: str = ""
    cors_origin: str = "*"
    local_domains: list = field(default_factory=list)
    workers: int = 4
    max_retries: int = 3
    siem_webhook_url: str = ""
    semantic_endpoint_url: str = ""
    semantic_endpoint_enabled: bool = False
    brands: list = field(default_factory=lambda: list(DEFAULT_BRANDS))
    urgency_lexicon: list = field(default_factory=lambda: list(URGENCY_LEXICON))
    money_lexicon: list = field(default_factory=lambda: list(MONEY_LEXICON))
    sandbox: SandboxConfig = field(default_factory=SandboxConfig)
    policy: VerdictPolicy = field(default_factory=VerdictPolicy)

    @property
    def blob_dir(self) -> Path:
        return Path(self.data_dir) / "blobs"

    @property
    def rules_dir(self) -> Path:
        return Path(self.config_dir) / "rules"

    @property
    def blocklist_dir(self) -> Path:
        return Path(self.config_dir) / "blocklists"

    @property
    def model_path(self) -> Path:
        return Path(self.config_dir) / "models" / "forest.json"

    @property
    def siem_path(self) -> Path:
        return Path(self.data_dir) / "siem" / "flags.jsonl"


def load_config(path: str | os.PathLike | None = None) -> Config:
    """Read TOML config; missing file or None path yields defaults."""
    if path is None:
        path = os.environ.get("POST_CONFIG")
    cfg = Config()
    if not path or not Path(path).exists():
        return cfg
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    for key, value in raw.items():
        if key == "sandbox" and isinstance(value, dict):
            for k, v in value.items():
                if hasattr(cfg.sandbox, k):
                    setattr(cfg.sandbox, k, v)
        elif key == "policy" and isinstance(value, dict):
            for k, v in value.items():
                if hasattr(cfg.policy, k):
                    setattr(cfg.policy, k, v)
        elif hasattr(cfg, key):
            setattr(cfg, key, value)
    return cfg
