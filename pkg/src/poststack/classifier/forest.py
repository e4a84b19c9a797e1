"""From-scratch Random Forest: bootstrap sampling, Gini splits over a
random feature subset, deterministic seeded RNG, canonical JSON
serialization.

Determinism contract: (dataset, params, seed) fixes the model exactly,
byte for byte. Ties in Gini break toward the lowest feature index, then
the lowest threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from ..errors import CorruptModel, EmptyDataset, InvalidParams, SchemaMismatch
from .features import FEATURE_SCHEMA_VERSION, N_FEATURES

CLASSES = ("benign", "spam", "malicious")
CLASS_INDEX = {c: i for i, c in enumerate(CLASSES)}
MODEL_SCHEMA_VERSION = 1

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """Tiny deterministic RNG; fixed here so retraining reproduces the
    same model on any machine."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        return self.next64() % n

    def sample(self, population: int, k: int) -> list:
        """k distinct indices from range(population), partial Fisher-Yates."""
        pool = list(range(population))
        for i in range(k):
            j = i + self.below(population - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]


def tree_rng(seed: int, tree_index: int) -> SplitMix64:
    # per-tree stream derived from (seed, index) so parallel building
    # would stay deterministic
    mixer = SplitMix64((seed ^ 0xA5A5A5A5A5A5A5A5) & _MASK64)
    base = mixer.next64()
    return SplitMix64(base ^ (tree_index * 0x9E3779B97F4A7C15) & _MASK64)


@dataclass
class ForestParams:
    n_trees: int = 50
    max_depth: int = 12
    min_samples_leaf: int = 1
    n_feature_subset: int = 17  # ceil(sqrt(272))

    def validate(self) -> None:
        if self.n_trees < 1 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise InvalidParams("n_trees, max_depth and min_samples_leaf must be >= 1")
        if not (1 <= self.n_feature_subset <= N_FEATURES):
            raise InvalidParams("n_feature_subset out of range")


@dataclass
class ForestModel:
    trees: list
    params: ForestParams
    training_seed: int
    feature_schema_version: int = FEATURE_SCHEMA_VERSION
    schema_version: int = MODEL_SCHEMA_VERSION


@dataclass
class ClassDistribution:
    p_benign: float
    p_spam: float
    p_malicious: float

    @property
    def probabilities(self) -> tuple:
        return (self.p_benign, self.p_spam, self.p_malicious)

    @property
    def label(self) -> str:
        probs = self.probabilities
        return CLASSES[probs.index(max(probs))]

    @property
    def confidence(self) -> float:
        return max(self.probabilities)


def gini(counts: list) -> float:
    total = sum(counts)
    if total == 0:
        return 0.0
    return 1.0 - sum((c / total) ** 2 for c in counts)


def _tally(labels: list, indices: list) -> list:
    counts = [0, 0, 0]
    for i in indices:
        counts[labels[i]] += 1
    return counts


def best_split(X: list, y: list, indices: list, feature_ids: list, min_leaf: int):
    """Minimal weighted-Gini (feature, threshold) over candidate features;
    thresholds at midpoints between sorted distinct values. Returns
    (gini, feature, threshold) or None."""
    n = len(indices)
    best = None
    for f in sorted(feature_ids):
        values = sorted({X[i][f] for i in indices})
        if len(values) < 2:
            continue
        pairs = sorted((X[i][f], y[i]) for i in indices)
        # sweep thresholds left to right maintaining class counts
        left = [0, 0, 0]
        right = _tally(y, indices)
        pos = 0
        for k in range(len(values) - 1):
            threshold = (values[k] + values[k + 1]) / 2.0
            while pos < n and pairs[pos][0] <= threshold:
                left[pairs[pos][1]] += 1
                right[pairs[pos][1]] -= 1
                pos += 1
            nl = sum(left)
            nr = n - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            score = (nl * gini(left) + nr * gini(right)) / n
            if best is None or score < best[0]:
                best = (score, f, threshold)
    return best


def _build(X, y, indices, depth, params: ForestParams, rng: SplitMix64):
    counts = _tally(y, indices)
    if (
        depth >= params.max_depth
        or sum(1 for c in counts if c > 0) <= 1
        or len(indices) < 2 * params.min_samples_leaf
    ):
        return {"c": counts}
    if params.n_feature_subset >= N_FEATURES:
        feature_ids = list(range(N_FEATURES))
    else:
        feature_ids = rng.sample(N_FEATURES, params.n_feature_subset)
    split = best_split(X, y, indices, feature_ids, params.min_samples_leaf)
    if split is None:
        return {"c": counts}
    _score, f, threshold = split
    left_idx = [i for i in indices if X[i][f] <= threshold]
    right_idx = [i for i in indices if X[i][f] > threshold]
    return {
        "f": f,
        "t": threshold,
        "l": _build(X, y, left_idx, depth + 1, params, rng),
        "r": _build(X, y, right_idx, depth + 1, params, rng),
    }


def train_forest(dataset: list, params: ForestParams, seed: int) -> ForestModel:
    """dataset: list of (feature vector, class label string)."""
    if not dataset:
        raise EmptyDataset("training dataset is empty")
    params.validate()
    X = []
    y = []
    for fv, label in dataset:
        if len(fv) != N_FEATURES:
            raise InvalidParams(f"feature vector length {len(fv)} != {N_FEATURES}")
        if label not in CLASS_INDEX:
            raise InvalidParams(f"unknown class label {label!r}")
        X.append(list(fv))
        y.append(CLASS_INDEX[label])
    n = len(X)
    trees = []
    for t in range(params.n_trees):
        rng = tree_rng(seed, t)
        bootstrap = [rng.below(n) for _ in range(n)]
        trees.append(_build(X, y, bootstrap, 0, params, rng))
    return ForestModel(trees=trees, params=params, training_seed=seed)


def _route(node: dict, fv) -> list:
    while "c" not in node:
        node = node["l"] if fv[node["f"]] <= node["t"] else node["r"]
    return node["c"]


def predict(model: ForestModel, fv) -> ClassDistribution:
    if len(fv) != N_FEATURES:
        raise SchemaMismatch(f"feature vector length {len(fv)} != {N_FEATURES}")
    acc = [0.0, 0.0, 0.0]
    for tree in model.trees:
        counts = _route(tree, fv)
        total = sum(counts)
        if total == 0:
            continue
        for k in range(3):
            acc[k] += counts[k] / total
    n_trees = len(model.trees)
    probs = [a / n_trees for a in acc]
    norm = sum(probs)
    if norm > 0:
        probs = [p / norm for p in probs]
    else:
        probs = [1.0, 0.0, 0.0]
    return ClassDistribution(*probs)


def save_model(model: ForestModel) -> bytes:
    doc = {
        "schema_version": model.schema_version,
        "feature_schema_version": model.feature_schema_version,
        "training_seed": model.training_seed,
        "params": {
            "n_trees": model.params.n_trees,
            "max_depth": model.params.max_depth,
            "min_samples_leaf": model.params.min_samples_leaf,
            "n_feature_subset": model.params.n_feature_subset,
        },
        "classes": list(CLASSES),
        "trees": model.trees,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _check_node(node) -> None:
    if not isinstance(node, dict):
        raise CorruptModel("tree node is not an object")
    if "c" in node:
        counts = node["c"]
        if not (isinstance(counts, list) and len(counts) == 3):
            raise CorruptModel("leaf counts malformed")
        return
    if not all(k in node for k in ("f", "t", "l", "r")):
        raise CorruptModel("internal node missing keys")
    if not (0 <= node["f"] < N_FEATURES):
        raise CorruptModel(f"feature index {node['f']} out of range")
    _check_node(node["l"])
    _check_node(node["r"])


def load_model(data: bytes) -> ForestModel:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise CorruptModel(f"unreadable model file: {exc}") from exc
    if not isinstance(doc, dict) or "trees" not in doc:
        raise CorruptModel("model file missing trees")
    if doc.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise SchemaMismatch(
            f"model schema_version {doc.get('schema_version')} != {MODEL_SCHEMA_VERSION}"
        )
    if doc.get("feature_schema_version") != FEATURE_SCHEMA_VERSION:
        raise SchemaMismatch("feature schema version mismatch")
    for tree in doc["trees"]:
        _check_node(tree)
    p = doc.get("params", {})
    params = ForestParams(
        n_trees=p.get("n_trees", len(doc["trees"])),
        max_depth=p.get("max_depth", 12),
        min_samples_leaf=p.get("min_samples_leaf", 1),
        n_feature_subset=p.get("n_feature_subset", 17),
    )
    return ForestModel(
        trees=doc["trees"],
        params=params,
        training_seed=doc.get("training_seed", 0),
        feature_schema_version=doc["feature_schema_version"],
        schema_version=doc["schema_version"],
    )
