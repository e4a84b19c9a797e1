"""HTTP surface: every system function as a JSON endpoint under /v1.

The app is assembled around a Service bundle (store + blob store +
pipeline + ingestor) so tests can drive it with an in-process client and
synchronous processing, while `serve` runs it under uvicorn with worker
threads.
"""

from __future__ import annotations

import json
import logging
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse

from .attachments import SandboxClient
from .classifier import load_model
from .config import Config
from .emlparse import parse_eml
from .errors import PostError, UnknownEmail
from .ingest import BlobStore, DirectoryWatcher, Ingestor
from .intel import Blocklist, load_blocklist_dir
from .pipeline import Pipeline, cost_model
from .rules import Ruleset, load_rules_dir
from .smtpd import SmtpServer
from .store import Store

logger = logging.getLogger(__name__)


class Service:
    """Everything behind the API, wired together from one Config."""

    def __init__(self, config: Config, sync: bool = False):
        self.config = config
        self.sync = sync
        self.store = Store(config.data_dir)
        self.blobs = BlobStore(config.blob_dir)
        self.ruleset, rule_errors = load_rules_dir(config.rules_dir)
        for err in rule_errors:
            logger.warning("skipped bad rules file: %s", err)
        self.blocklist = (
            load_blocklist_dir(config.blocklist_dir)
            if config.blocklist_dir.exists()
            else Blocklist()
        )
        model = None
        if config.model_path.exists():
            model = load_model(config.model_path.read_bytes())
        sandbox = SandboxClient(config.sandbox) if config.sandbox.enabled else None
        self.pipeline = Pipeline(
            config, self.store, self.blobs, self.ruleset, self.blocklist,
            model=model, sandbox=sandbox,
        )
        on_stored = self.pipeline.process_email if sync else self.pipeline.on_stored
        self.ingestor = Ingestor(self.blobs, on_stored=on_stored)
        self.smtp: Optional[SmtpServer] = None
        self.watcher: Optional[DirectoryWatcher] = None

    def start(self):
        self.pipeline.start()
        self.smtp = SmtpServer(
            self.ingestor, host=self.config.smtp_host, port=self.config.smtp_port,
            max_size=self.config.smtp_max_size,
        )
        self.smtp.start()
        if self.config.watch_dir:
            self.watcher = DirectoryWatcher(
                self.config.watch_dir, self.ingestor, self.config.watch_interval_s
            )
            self.watcher.start()

    def stop(self):
        if self.watcher:
            self.watcher.stop()
        if self.smtp:
            self.smtp.stop()
        self.pipeline.drain()
        self.pipeline.stop()
        self.store.close()

    def reload_rules(self) -> int:
        from .rules import parse_ruleset

        merged = Ruleset()
        if self.config.rules_dir.exists():
            for path in sorted(self.config.rules_dir.glob("*.post-rules")):
                rs = parse_ruleset(path.read_text(encoding="utf-8"))  # raises on bad file
                merged.rules.extend(rs.rules)
        self.ruleset = merged
        self.pipeline.ruleset = merged
        return len(merged.rules)

    def stats(self) -> dict:
        by_classification = {"benign": 0, "spam": 0, "malicious": 0, "pending": 0}
        by_disposition = {"delivered": 0, "quarantined": 0, "blocked": 0}
        latest = ""
        for record in self.store.records.values():
            if record.verdict is None:
                by_classification["pending"] += 1
            else:
                by_classification[record.verdict.classification] += 1
                by_disposition[record.verdict.disposition] += 1
            latest = max(latest, record.ingest.received_at)
        return {
            "total_emails": len(self.store),
            "by_classification": by_classification,
            "by_disposition": by_disposition,
            "rules_loaded": len(self.ruleset.rules),
            "latest_ingest": latest or None,
        }


def build_app(service: Service) -> FastAPI:
    config = service.config
    app = FastAPI(title="poststack", version="0.1.0", openapi_url="/v1/openapi.json")

    app.add_middleware(
        CORSMiddleware,
        allow_origins=[config.cors_origin] if config.cors_origin != "*" else ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(PostError)
    async def post_error_handler(request: Request, exc: PostError):
        return JSONResponse(
            status_code=exc.status,
            content={"status": exc.status, "code": exc.code, "message": exc.message},
        )

    def check_auth(request: Request) -> Optional[JSONResponse]:
        if not config.api_token:
            return None
        header = request.headers.get("authorization", "")
        if header != f"Bearer {config.api_token}":
            return JSONResponse(
                status_code=401,
                content={"status": 401, "code": "Unauthorized", "message": "bad or missing bearer token"},
            )
        return None

    @app.middleware("http")
    async def auth_middleware(request: Request, call_next):
        if request.url.path not in ("/v1/health", "/v1/openapi.json"):
            denied = check_auth(request)
            if denied is not None:
                return denied
        return await call_next(request)

    @app.get("/v1/health")
    async def health():
        return {"status": "ok"}

    @app.post("/v1/ingest", status_code=202)
    async def ingest(request: Request):
        raw = await request.body()
        if len(raw) > config.smtp_max_size:
            return JSONResponse(
                status_code=413,
                content={"status": 413, "code": "MessageTooLarge",
                         "message": f"message exceeds {config.smtp_max_size} bytes"},
            )
        receipt = service.ingestor.ingest_bytes(raw, "api")
        return receipt.to_dict()

    @app.get("/v1/emails")
    async def search(q: str = "", cursor: Optional[str] = None, limit: int = 50):
        result = service.store.search(q, limit=limit, cursor=cursor)
        return result.to_dict()

    @app.get("/v1/emails/{email_id}")
    async def get_email(email_id: str, request: Request):
        record = service.store.get(email_id)
        etag = f'"{email_id}:{len(record.flags)}:{int(record.final)}"'
        if request.headers.get("if-none-match") == etag:
            return Response(status_code=304)
        return JSONResponse(content=record.to_dict(), headers={"ETag": etag})

    @app.get("/v1/emails/{email_id}/raw")
    async def get_raw(email_id: str):
        if not service.blobs.exists(email_id):
            raise UnknownEmail(email_id)
        return Response(content=service.blobs.read(email_id), media_type="message/rfc822")

    @app.get("/v1/emails/{email_id}/attachments/{n}")
    async def get_attachment(email_id: str, n: int):
        record = service.store.get(email_id)
        if n < 0 or n >= len(record.email.attachments):
            raise UnknownEmail(f"{email_id} has no attachment {n}")
        # payloads live in the raw blob, not the record
        email = parse_eml(service.blobs.read(email_id))
        ref = record.email.attachments[n]
        payload = email.attachment_payloads[n]
        headers = {}
        if ref.filename:
            headers["Content-Disposition"] = f'attachment; filename="{ref.filename}"'
        return Response(content=payload, media_type=ref.declared_mime, headers=headers)

    @app.get("/v1/flags")
    async def flags_feed(since: str = ""):
        sink = config.siem_path
        lines = []
        if sink.exists():
            for line in sink.read_text(encoding="utf-8").splitlines():
                try:
                    doc = json.loads(line)
                except ValueError:
                    continue
                if not since or doc.get("ts", "") >= since:
                    lines.append(line)
        return PlainTextResponse("\n".join(lines) + ("\n" if lines else ""),
                                 media_type="application/x-ndjson")

    @app.post("/v1/rules/reload")
    async def rules_reload():
        n = service.reload_rules()
        return {"rules_loaded": n}

    @app.get("/v1/stats")
    async def stats():
        return service.stats()

    @app.get("/v1/costmodel")
    async def costmodel(users: int = 0, emails_per_month: int = -1):
        return cost_model(users, emails_per_month)

    return app


def serve(config: Config):  # pragma: no cover - exercised via CLI integration
    import uvicorn

    service = Service(config)
    service.start()
    app = build_app(service)
    try:
        uvicorn.run(app, host=config.api_host, port=config.api_port, log_level="info")
    finally:
        service.stop()
