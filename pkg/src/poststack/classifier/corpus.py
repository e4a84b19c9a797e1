"""Synthetic training corpus generator.

No labelled dataset ships with the system, so training and the smoke
accuracy check run against template-generated emails: benign business
mail, promotional spam, and urgency/money phishing. Deterministic per
seed.
"""

from __future__ import annotations

import json
import random

from ..emlparse import parse_eml
from .features import extract_features

BENIGN_WORDS = (
    "meeting agenda minutes quarterly report project schedule review notes "
    "team standup sprint release deploy staging metrics dashboard lunch "
    "thanks regards attached summary feedback draft proposal timeline".split()
)
SPAM_WORDS = (
    "sale discount offer free winner exclusive deal limited congratulations "
    "prize bonus subscribe unsubscribe click buy cheap guarantee trial "
    "amazing incredible savings promotion newsletter".split()
)
MALICIOUS_WORDS = (
    "urgent verify account suspended password expires immediately security "
    "alert confirm invoice wire transfer payment bitcoin gift card bank "
    "login credentials unusual activity locked final notice".split()
)


def _sentence(rng: random.Random, words, n) -> str:
    return " ".join(rng.choice(words) for _ in range(n))


def make_benign(rng: random.Random) -> bytes:
    subject = _sentence(rng, BENIGN_WORDS, rng.randint(2, 5))
    body = _sentence(rng, BENIGN_WORDS, rng.randint(20, 80))
    if rng.random() < 0.2:
        body += "\nsee https://wiki.corp.test/page" + str(rng.randint(1, 9))
    return (
        f"From: colleague{rng.randint(1, 20)}@corp.test\r\n"
        f"To: me@corp.test\r\n"
        f"Subject: {subject}\r\n"
        f"\r\n{body}\r\n"
    ).encode()


def make_spam(rng: random.Random) -> bytes:
    subject = _sentence(rng, SPAM_WORDS, rng.randint(3, 6)).upper() + "!!!"
    inner = _sentence(rng, SPAM_WORDS, rng.randint(15, 50))
    n_links = rng.randint(1, 4)
    links = "".join(
        f'<a href="http://promo{rng.randint(1, 30)}.offers.test/c{j}">CLICK HERE</a> '
        for j in range(n_links)
    )
    html = f"<html><body><b>{inner}!</b> {links}</body></html>"
    return (
        f"From: deals@offers{rng.randint(1, 9)}.test\r\n"
        f"To: me@corp.test\r\n"
        f"Subject: {subject}\r\n"
        f"Content-Type: text/html; charset=utf-8\r\n"
        f"\r\n{html}\r\n"
    ).encode()


def make_malicious(rng: random.Random) -> bytes:
    subject = "URGENT: " + _sentence(rng, MALICIOUS_WORDS, rng.randint(2, 4))
    body_words = _sentence(rng, MALICIOUS_WORDS, rng.randint(15, 50))
    body = (
        f"{body_words} action required immediately verify your payment "
        f"http://login-{rng.randint(1, 40)}.secure-update.test/verify"
    )
    brand = rng.choice(["PayPal Support", "Microsoft Security", "Bank Alerts"])
    return (
        f'From: "{brand}" <alert@{rng.choice("xyzw")}{rng.randint(1, 40)}.badhost.test>\r\n'
        f"To: me@corp.test\r\n"
        f"Subject: {subject}\r\n"
        f"\r\n{body}\r\n"
    ).encode()


GENERATORS = {
    "benign": make_benign,
    "spam": make_spam,
    "malicious": make_malicious,
}


def generate_corpus(n: int = 500, seed: int = 1234) -> list:
    """Returns n (feature_vector, label) pairs, classes balanced."""
    rng = random.Random(seed)
    labels = ["benign", "spam", "malicious"]
    out = []
    for i in range(n):
        label = labels[i % 3]
        raw = GENERATORS[label](rng)
        out.append((extract_features(parse_eml(raw)), label))
    return out


def write_corpus_jsonl(path, n: int = 500, seed: int = 1234) -> int:
    rows = generate_corpus(n, seed)
    with open(path, "w", encoding="utf-8") as fh:
        for features, label in rows:
            fh.write(json.dumps({"features": features, "label": label}) + "\n")
    return len(rows)


def read_dataset_jsonl(path) -> list:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            out.append((row["features"], row["label"]))
    return out


def split_train_eval(dataset: list, ratio: float = 0.8, seed: int = 7) -> tuple:
    """Deterministic shuffled 80/20 split."""
    rng = random.Random(seed)
    order = list(range(len(dataset)))
    rng.shuffle(order)
    cut = int(len(dataset) * ratio)
    train = [dataset[i] for i in order[:cut]]
    hold = [dataset[i] for i in order[cut:]]
    return train, hold
