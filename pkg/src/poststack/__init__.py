"""poststack: self-hosted email archival, processing and flagging."""

__version__ = "0.1.0"
