"""Operator command line.

Commands run embedded against the data directory from the config file;
`serve` starts the full service (SMTP listener, directory watcher,
pipeline workers, HTTP API).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .classifier import ForestParams, predict, save_model, train_forest
from .classifier.corpus import read_dataset_jsonl, split_train_eval
from .classifier.forest import CLASSES
from .config import load_config
from .errors import PostError
from .pipeline import cost_model
from .rules import parse_ruleset


def _service(config_path):
    from .api import Service

    return Service(load_config(config_path), sync=True)


def _fail(exc: PostError):
    click.echo(f"error [{exc.code}]: {exc.message}", err=True)
    sys.exit(1)


@click.group()
def main():
    """Self-hosted email archival, processing and flagging service."""


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="TOML config file (default: POST_CONFIG env var).")
def serve(config_path):
    """Run the full service: SMTP, directory watcher, pipeline, HTTP API."""
    from .api import serve as api_serve

    api_serve(load_config(config_path))


@main.command()
@click.argument("path", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(), default=None)
def ingest(path, config_path):
    """Ingest one .eml file or every *.eml under a directory."""
    svc = _service(config_path)
    target = Path(path)
    files = sorted(target.rglob("*.eml")) if target.is_dir() else [target]
    failures = 0
    for f in files:
        try:
            receipt = svc.ingestor.ingest_bytes(f.read_bytes(), "directory")
        except PostError as exc:
            click.echo(f"{f}: error [{exc.code}]: {exc.message}", err=True)
            failures += 1
            continue
        dup = " (duplicate)" if receipt.duplicate else ""
        click.echo(f"{f}: {receipt.email_id}{dup}")
    svc.store.close()
    if failures:
        sys.exit(1)


@main.command()
@click.argument("query")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--limit", default=50, show_default=True)
def search(query, config_path, limit):
    """Search the archive with the forensic query language."""
    svc = _service(config_path)
    try:
        result = svc.store.search(query, limit=limit)
    except PostError as exc:
        svc.store.close()
        _fail(exc)
    header = f"{'id':<16} {'date':<12} {'from':<28} {'subject':<30} {'verdict':<10} score"
    click.echo(header)
    click.echo("-" * len(header))
    for hit in result.hits:
        record = svc.store.get(hit.email_id)
        sender = ""
        if record.email.from_:
            a = record.email.from_[0]
            sender = f"{a.local_part}@{a.domain}"
        verdict = hit.verdict["classification"] if hit.verdict else "pending"
        click.echo(
            f"{hit.email_id[:16]:<16} {hit.received_at[:10]:<12} "
            f"{sender[:28]:<28} {hit.subject[:30]:<30} {verdict:<10} {hit.score}"
        )
    click.echo(f"{result.total_count} result(s)")
    svc.store.close()


@main.command()
@click.argument("email_id")
@click.option("--config", "config_path", type=click.Path(), default=None)
def show(email_id, config_path):
    """Print the full record for one email, including flag rationale."""
    svc = _service(config_path)
    try:
        record = svc.store.get(email_id)
    except PostError as exc:
        svc.store.close()
        _fail(exc)
    click.echo(json.dumps(record.to_dict(), indent=2, ensure_ascii=False))
    svc.store.close()


@main.command()
@click.option("--data", "data_path", type=click.Path(exists=True), required=True,
              help="Training dataset (JSONL of {features, label}).")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--trees", default=50, show_default=True)
@click.option("--depth", default=12, show_default=True)
@click.option("--seed", default=42, show_default=True)
def train(data_path, out_path, trees, depth, seed):
    """Train the random-forest classifier; prints a held-out confusion matrix."""
    try:
        dataset = read_dataset_jsonl(Path(data_path))
        train_set, hold = split_train_eval(dataset, 0.8, seed=7)
        params = ForestParams(n_trees=trees, max_depth=depth)
        model = train_forest(train_set, params, seed=seed)
    except PostError as exc:
        _fail(exc)
    # rows: true label, cols: predicted
    matrix = {t: {p: 0 for p in CLASSES} for t in CLASSES}
    for fv, label in hold:
        matrix[label][predict(model, fv).label] += 1
    correct = sum(matrix[c][c] for c in CLASSES)
    label = "true / pred"
    click.echo(f"{label:<12} " + " ".join(f"{c:>10}" for c in CLASSES))
    for t in CLASSES:
        click.echo(f"{t:<12} " + " ".join(f"{matrix[t][p]:>10}" for p in CLASSES))
    total = len(hold) or 1
    click.echo(f"held-out accuracy: {correct / total:.3f} ({correct}/{len(hold)})")
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    Path(out_path).write_bytes(save_model(model))
    click.echo(f"model written to {out_path}")


@main.group()
def rules():
    """Ruleset tooling."""


@rules.command("check")
@click.argument("path", type=click.Path(exists=True))
def rules_check(path):
    """Lint a rules file; exit 0 when every rule parses."""
    try:
        rs = parse_ruleset(Path(path).read_text(encoding="utf-8"))
    except PostError as exc:
        _fail(exc)
    click.echo(f"{len(rs.rules)} rules OK")


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
def stats(config_path):
    """Archive totals by verdict and disposition."""
    svc = _service(config_path)
    click.echo(json.dumps(svc.stats(), indent=2))
    svc.store.close()


@main.command()
@click.option("--users", type=int, required=True)
@click.option("--emails-per-month", type=int, required=True)
def cost(users, emails_per_month):
    """Annual cost: commercial gateway vs this stack."""
    try:
        out = cost_model(users, emails_per_month)
    except PostError as exc:
        _fail(exc)
    click.echo(f"gateway: ${out['gateway_annual_usd']:,.0f}/year")
    click.echo(f"post:    ${out['post_annual_usd']:,.0f}/year")
    if out["ratio"] == "n/a":
        click.echo("ratio:   n/a (zero email volume)")
    else:
        click.echo(f"ratio:   {out['ratio']:.1f}x lower ({out['savings_percent']:.1f}% savings)")


if __name__ == "__main__":
    main()
