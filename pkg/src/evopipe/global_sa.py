"""Global sensitivity analysis: meta-learning from run histories.

Covers normalized fitness ranks, the operation-pair suitability table,
directed node choice during mutation, edge-count graph encoding, and a
regression-forest rank predictor driving metamodel mutation.
"""

from __future__ import annotations

import json
import logging
import math
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .graph import Pipeline, deserialize, serialize

log = logging.getLogger(__name__)

HISTORY_FORMAT_VERSION = 1

# Neutral contribution of an unobserved operation pair: the mean rank.
NEUTRAL_SUITABILITY = 0.5

# Scores below this use the uniform fallback branch of directed choice.
FALLBACK_SCORE = 0.1

METAMODEL_TOP_N = 5


class HistoryError(Exception):
    """History store could not be read or is insufficient."""


@dataclass(frozen=True)
class HistoryRecord:
    run_id: str
    dataset_id: str
    pipeline: Pipeline
    fitness: float
    timestamp: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.fitness):
            raise ValueError("fitness must be finite")


class HistoryStore:
    """Append-only line-delimited JSON store of history records."""

    def __init__(self, path):
        self.path = str(path)

    def append(self, record: HistoryRecord) -> None:
        line = json.dumps(
            {
                "format_version": HISTORY_FORMAT_VERSION,
                "run_id": record.run_id,
                "dataset_id": record.dataset_id,
                "pipeline": json.loads(serialize(record.pipeline)),
                "fitness": record.fitness,
                "timestamp": record.timestamp,
            },
            sort_keys=True,
            separators=(",", ":"),
        )
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")

    def load(self) -> tuple:
        """Return (records, warnings); corrupt lines are skipped and reported."""
        records, warnings = [], []
        try:
            with open(self.path, "r", encoding="utf-8") as fh:
                lines = fh.readlines()
        except OSError as exc:
            raise HistoryError(f"cannot read history {self.path}: {exc}") from exc
        for lineno, line in enumerate(lines, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                record = HistoryRecord(
                    run_id=str(doc["run_id"]),
                    dataset_id=str(doc["dataset_id"]),
                    pipeline=deserialize(json.dumps(doc["pipeline"])),
                    fitness=float(doc["fitness"]),
                    timestamp=float(doc.get("timestamp", 0.0)),
                )
                records.append(record)
            except Exception as exc:  # noqa: BLE001 - any corrupt line is a warning
                warnings.append(f"line {lineno}: {exc}")
        for w in warnings:
            log.warning("history store: skipped corrupt %s", w)
        return records, warnings

    def query(self, dataset_id: Optional[str] = None, run_id: Optional[str] = None) -> list:
        records, _ = self.load()
        if dataset_id is not None:
            records = [r for r in records if r.dataset_id == dataset_id]
        if run_id is not None:
            records = [r for r in records if r.run_id == run_id]
        return records


# ---------------------------------------------------------------------------
# Normalized ranks


def normalized_ranks(fitnesses) -> list:
    """Fractional ranks in (0, 1]: best fitness gets 1.0, ties share the
    mean of their 1-based positions divided by the count."""
    n = len(fitnesses)
    if n == 0:
        return []
    order = sorted(range(n), key=lambda i: fitnesses[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and fitnesses[order[j + 1]] == fitnesses[order[i]]:
            j += 1
        mean_pos = (i + 1 + j + 1) / 2.0
        for k in range(i, j + 1):
            ranks[order[k]] = mean_pos / n
        i = j + 1
    return ranks


def normalized_rank(records) -> dict:
    """Pipeline (canonical document) -> normalized rank for one dataset's records."""
    if not records:
        return {}
    ranks = normalized_ranks([r.fitness for r in records])
    out = {}
    for record, rank in zip(records, ranks):
        key = serialize(record.pipeline)
        out.setdefault(key, []).append(rank)
    return {k: sum(v) / len(v) for k, v in out.items()}


# ---------------------------------------------------------------------------
# Suitability table


@dataclass
class SuitabilityTable:
    """(from_op, to_op) -> mean normalized rank of pipelines containing that
    edge (set semantics per pipeline). Unobserved pairs are absent."""

    scores: dict = field(default_factory=dict)
    support: dict = field(default_factory=dict)

    def get(self, from_op: str, to_op: str, default: float = NEUTRAL_SUITABILITY) -> float:
        return self.scores.get((from_op, to_op), default)

    def operations(self) -> list:
        ops = set()
        for a, b in self.scores:
            ops.add(a)
            ops.add(b)
        return sorted(ops)

    def to_grid(self) -> str:
        """Human-readable matrix: rows = source op, columns = target op."""
        ops = self.operations()
        if not ops:
            return "(empty table)\n"
        width = max(len(o) for o in ops) + 2
        header = " " * width + "".join(o.ljust(width) for o in ops)
        lines = [header]
        for a in ops:
            cells = []
            for b in ops:
                v = self.scores.get((a, b))
                cells.append(("-" if v is None else f"{v:.3f}").ljust(width))
            lines.append(a.ljust(width) + "".join(cells))
        return "\n".join(lines) + "\n"

    def to_document(self) -> str:
        doc = {
            "cells": [
                {"from": a, "to": b, "score": s, "support": self.support[(a, b)]}
                for (a, b), s in sorted(self.scores.items())
            ]
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def build_suitability_table(history) -> SuitabilityTable:
    """Mean normalized rank over pipelines containing each operation pair.

    Ranks are normalized within each dataset, then pooled across datasets.
    Each pipeline contributes once per distinct pair it contains.
    """
    by_dataset = {}
    for record in history:
        by_dataset.setdefault(record.dataset_id, []).append(record)

    sums, counts = {}, {}
    for records in by_dataset.values():
        ranks = normalized_ranks([r.fitness for r in records])
        for record, rank in zip(records, ranks):
            for pair in set(record.pipeline.edge_operation_pairs()):
                sums[pair] = sums.get(pair, 0.0) + rank
                counts[pair] = counts.get(pair, 0) + 1

    table = SuitabilityTable()
    for pair, total in sums.items():
        table.scores[pair] = total / counts[pair]
        table.support[pair] = counts[pair]
    return table


def choose_node_directed(
    parent_ops,
    child_ops,
    candidates,
    table: SuitabilityTable,
    rng: random.Random,
) -> str:
    """Pick a candidate operation weighted by its suitability in context.

    Each candidate scores the sum of parent->candidate and candidate->child
    cells (absent cells contribute the neutral value). Negative-scored
    candidates are dropped; if the best remaining score is below the
    fallback bound, a uniform draw over the original candidates is used.
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    scores = {}
    for cand in candidates:
        score = sum(table.get(p, cand) for p in parent_ops)
        score += sum(table.get(cand, c) for c in child_ops)
        scores[cand] = score

    kept = {c: s for c, s in scores.items() if s >= 0.0}
    if not kept or max(kept.values()) < FALLBACK_SCORE:
        return rng.choice(sorted(candidates))
    names = sorted(kept)
    total = sum(kept[n] for n in names)
    weights = [kept[n] / total for n in names]
    return rng.choices(names, weights=weights)[0]


class SuitabilityAdvisor:
    """Mutation advisor delegating operation choice to the suitability table."""

    def __init__(self, table: SuitabilityTable):
        self.table = table

    def choose_operation(self, pipeline, parent_ops, child_ops, candidates, rng, builder=None):
        return choose_node_directed(parent_ops, child_ops, candidates, self.table, rng)


def directed_node_change(pipeline, table, catalog, rng, constraints=None):
    """Node-change mutation with table-directed operation choice."""
    from .optimizer import Individual, mutate
    from .space import StructuralConstraints

    constraints = constraints or StructuralConstraints()
    result = mutate(
        Individual(pipeline=pipeline),
        catalog,
        constraints,
        rng,
        mutation_rates={"node_change": 1.0},
        advisor=SuitabilityAdvisor(table),
    )
    return result.pipeline


def directed_node_add(pipeline, table, catalog, rng, constraints=None):
    """Node-addition mutation with table-directed operation choice."""
    from .optimizer import Individual, mutate
    from .space import StructuralConstraints

    constraints = constraints or StructuralConstraints()
    result = mutate(
        Individual(pipeline=pipeline),
        catalog,
        constraints,
        rng,
        mutation_rates={"node_add": 1.0},
        advisor=SuitabilityAdvisor(table),
    )
    return result.pipeline


# ---------------------------------------------------------------------------
# Graph encoding and meta-model


@dataclass(frozen=True)
class EncodedGraph:
    vocabulary: tuple  # ordered (from_op, to_op) pairs; last slot is overflow
    counts: tuple

    def as_array(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float)


def encode_graph(pipeline: Pipeline, vocabulary) -> EncodedGraph:
    """Edge-count vector over the op-pair vocabulary, plus an overflow bucket
    for pairs unseen at training time."""
    vocabulary = tuple(vocabulary)
    index = {pair: i for i, pair in enumerate(vocabulary)}
    counts = [0] * (len(vocabulary) + 1)
    for pair in pipeline.edge_operation_pairs():
        counts[index.get(pair, len(vocabulary))] += 1
    return EncodedGraph(vocabulary=vocabulary, counts=tuple(counts))


class _TreeNode:
    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, value=0.0):
        self.feature = -1
        self.threshold = 0.0
        self.left = None
        self.right = None
        self.value = value


class RegressionTree:
    """Depth-limited CART regression tree (squared error)."""

    def __init__(self, max_depth=6, min_samples_split=2, n_features_per_split=None):
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.n_features_per_split = n_features_per_split
        self.root = None

    def fit(self, x, y, rng):
        self.root = self._build(np.asarray(x, float), np.asarray(y, float), 0, rng)
        return self

    def _build(self, x, y, depth, rng):
        node = _TreeNode(value=float(y.mean()))
        if depth >= self.max_depth or len(y) < self.min_samples_split or np.all(y == y[0]):
            return node
        n, d = x.shape
        k = self.n_features_per_split or d
        features = sorted(rng.sample(range(d), min(k, d)))
        best = None  # (sse, feature, threshold)
        for j in features:
            order = np.argsort(x[:, j], kind="stable")
            xs, ys = x[order, j], y[order]
            csum = np.cumsum(ys)
            csq = np.cumsum(ys**2)
            total, total_sq = csum[-1], csq[-1]
            for i in range(n - 1):
                if xs[i] == xs[i + 1]:
                    continue
                nl = i + 1
                nr = n - nl
                sl, sql = csum[i], csq[i]
                sr, sqr = total - sl, total_sq - sql
                sse = (sql - sl * sl / nl) + (sqr - sr * sr / nr)
                if best is None or sse < best[0] - 1e-15:
                    best = (sse, j, (xs[i] + xs[i + 1]) / 2.0)
        if best is None:
            return node
        _, j, thr = best
        mask = x[:, j] <= thr
        node.feature = j
        node.threshold = thr
        node.left = self._build(x[mask], y[mask], depth + 1, rng)
        node.right = self._build(x[~mask], y[~mask], depth + 1, rng)
        return node

    def predict_one(self, row) -> float:
        node = self.root
        while node.left is not None:
            node = node.left if row[node.feature] <= node.threshold else node.right
        return node.value

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        return np.array([self.predict_one(row) for row in x])


@dataclass
class MetaModel:
    """Rank predictor: a bootstrap forest of regression trees over edge counts."""

    vocabulary: tuple
    trees: list
    n_trees: int
    seed: int

    def predict(self, pipeline: Pipeline) -> float:
        features = encode_graph(pipeline, self.vocabulary).as_array()
        pred = float(np.mean([t.predict_one(features) for t in self.trees]))
        return min(1.0, max(0.0, pred))


def fit_meta_model(
    history,
    seed: int = 0,
    n_trees: int = 50,
    max_depth: int = 6,
) -> MetaModel:
    """Fit the rank-predicting forest from a history of records.

    Features are per-pipeline edge-count encodings; targets are per-dataset
    normalized ranks. Bootstrap 100%, sqrt(d) feature subsampling per split.
    """
    history = list(history)
    if len(history) < 20:
        raise HistoryError(f"need >= 20 history records to fit meta-model, got {len(history)}")

    vocabulary = tuple(
        sorted({pair for r in history for pair in r.pipeline.edge_operation_pairs()})
    )

    by_dataset = {}
    for i, record in enumerate(history):
        by_dataset.setdefault(record.dataset_id, []).append(i)
    targets = np.zeros(len(history))
    for indices in by_dataset.values():
        ranks = normalized_ranks([history[i].fitness for i in indices])
        for i, rank in zip(indices, ranks):
            targets[i] = rank

    x = np.array([encode_graph(r.pipeline, vocabulary).as_array() for r in history])
    d = x.shape[1]
    k = max(1, int(round(math.sqrt(d))))

    rng = random.Random(seed)
    trees = []
    for _ in range(n_trees):
        idx = [rng.randrange(len(history)) for _ in range(len(history))]
        tree = RegressionTree(max_depth=max_depth, n_features_per_split=k)
        tree.fit(x[idx], targets[idx], rng)
        trees.append(tree)
    return MetaModel(vocabulary=vocabulary, trees=trees, n_trees=n_trees, seed=seed)


def metamodel_mutation(
    pipeline: Pipeline,
    candidates,
    meta_model: MetaModel,
    rng: random.Random,
    build: Callable,
) -> Pipeline:
    """Score each candidate's mutated graph by predicted rank, then pick
    uniformly among the top five and return that mutation.

    `build(op)` constructs the template mutated pipeline for a candidate, or
    raises/returns None when infeasible. Falls back to the input pipeline if
    no candidate builds.
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    built = {}
    scores = {}
    for op in sorted(candidates):
        try:
            template = build(op)
        except Exception:  # noqa: BLE001 - infeasible template
            continue
        if template is None:
            continue
        built[op] = template
        scores[op] = meta_model.predict(template)
    if not built:
        return pipeline
    top = sorted(scores, key=lambda o: (-scores[o], o))[:METAMODEL_TOP_N]
    choice = rng.choice(top)
    return built[choice]


class MetaModelAdvisor:
    """Mutation advisor scoring candidate operations with the meta-model."""

    def __init__(self, meta_model: MetaModel):
        self.meta_model = meta_model

    def choose_operation(self, pipeline, parent_ops, child_ops, candidates, rng, builder=None):
        if builder is None:
            return rng.choice(sorted(candidates))
        scores = {}
        for op in sorted(candidates):
            try:
                template = builder(op)
            except Exception:  # noqa: BLE001
                continue
            scores[op] = self.meta_model.predict(template)
        if not scores:
            return rng.choice(sorted(candidates))
        top = sorted(scores, key=lambda o: (-scores[o], o))[:METAMODEL_TOP_N]
        return rng.choice(top)


def make_history_record(run_id, dataset_id, pipeline, fitness, timestamp=None) -> HistoryRecord:
    return HistoryRecord(
        run_id=str(run_id),
        dataset_id=str(dataset_id),
        pipeline=pipeline,
        fitness=float(fitness),
        timestamp=time.time() if timestamp is None else float(timestamp),
    )
