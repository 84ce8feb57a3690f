"""Fitness evaluation: synthetic structural landscapes and a toy tabular-ML executor."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .graph import Pipeline, structural_complexity, topological_order

log = logging.getLogger(__name__)

# Sentinel quality for invalid evaluations; finite so it survives serialization.
WORST_QUALITY = -1.0e18

COMPLEXITY_PENALTY = 0.05


class DatasetError(Exception):
    """Dataset could not be loaded or is unusable."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    target: np.ndarray
    task: str  # "classification" | "regression"
    name: str = "dataset"

    def __post_init__(self):
        if self.task not in ("classification", "regression"):
            raise DatasetError(f"unknown task {self.task!r}")
        if self.features.shape[0] < 10:
            raise DatasetError("too few rows (need >= 10)")
        if self.features.shape[0] != self.target.shape[0]:
            raise DatasetError("feature/target row mismatch")


@dataclass(frozen=True)
class FitnessReport:
    quality: float
    complexity: int
    train_seconds: float = 0.0
    inference_seconds: float = 0.0
    valid: bool = True
    reason: str = ""

    def key_fields(self) -> tuple:
        """Fields covered by the determinism contract (timings excluded)."""
        return (self.quality, self.complexity, self.valid, self.reason)


def invalid_report(pipeline: Pipeline, reason: str) -> FitnessReport:
    return FitnessReport(
        quality=WORST_QUALITY,
        complexity=structural_complexity(pipeline),
        valid=False,
        reason=reason,
    )


# ---------------------------------------------------------------------------
# Metrics


def metric_f1(predictions, labels) -> float:
    """F1 score: positive-class for binary labels, macro-averaged beyond."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if len(predictions) != len(labels) or len(labels) == 0:
        raise ValueError("predictions and labels must have equal nonzero length")
    classes = np.unique(labels)
    if len(classes) <= 2:
        positive = classes.max()
        return _f1_one_class(predictions, labels, positive)
    return float(np.mean([_f1_one_class(predictions, labels, c) for c in classes]))


def _f1_one_class(predictions, labels, cls) -> float:
    tp = np.sum((predictions == cls) & (labels == cls))
    fp = np.sum((predictions == cls) & (labels != cls))
    fn = np.sum((predictions != cls) & (labels == cls))
    denom = 2 * tp + fp + fn
    return float(2 * tp / denom) if denom else 0.0


def metric_r2(predictions, targets) -> float:
    """Coefficient of determination; raises on zero-variance targets."""
    predictions = np.asarray(predictions, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if len(predictions) != len(targets) or len(targets) == 0:
        raise ValueError("predictions and targets must have equal nonzero length")
    ss_tot = float(np.sum((targets - targets.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("zero-variance targets")
    ss_res = float(np.sum((targets - predictions) ** 2))
    return 1.0 - ss_res / ss_tot


# ---------------------------------------------------------------------------
# Synthetic structural evaluator


class SyntheticEvaluator:
    """Deterministic linear landscape over pipeline structure.

    quality = sum of per-operation scores + sum of per-edge bonuses
    minus COMPLEXITY_PENALTY * node count. Score tables are drawn once from
    the landscape seed; op scores are uniform in [0, 1], edge bonuses uniform
    in [-0.5, 0.5].
    """

    def __init__(self, landscape_seed: int, catalog=None):
        from .space import default_catalog

        catalog = catalog or default_catalog()
        names = catalog.names()
        rng = np.random.default_rng(landscape_seed)
        self.op_score = {name: float(rng.uniform(0.0, 1.0)) for name in names}
        self.edge_bonus = {
            (a, b): float(rng.uniform(-0.5, 0.5)) for a in names for b in names
        }
        self.landscape_seed = landscape_seed

    def evaluate(self, pipeline: Pipeline) -> FitnessReport:
        quality = sum(self.op_score[op] for op in pipeline.operations())
        quality += sum(self.edge_bonus[pair] for pair in pipeline.edge_operation_pairs())
        quality -= COMPLEXITY_PENALTY * len(pipeline.nodes)
        return FitnessReport(quality=quality, complexity=structural_complexity(pipeline))

    __call__ = evaluate


class CountingEvaluator:
    """Wraps an evaluator; records call count and best-quality-so-far trace."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0
        self.best_trace = []  # best valid quality after each call
        self._best = float("-inf")

    def evaluate(self, pipeline: Pipeline) -> FitnessReport:
        report = self.inner.evaluate(pipeline)
        self.calls += 1
        if report.valid and report.quality > self._best:
            self._best = report.quality
        self.best_trace.append(self._best)
        return report

    __call__ = evaluate

    def calls_to_reach(self, target_quality: float) -> Optional[int]:
        """1-based evaluator-call index at which best-so-far first met target."""
        for i, q in enumerate(self.best_trace):
            if q >= target_quality:
                return i + 1
        return None


# ---------------------------------------------------------------------------
# Toy ML operations


def _fit_zscore(x_train):
    mu = x_train.mean(axis=0)
    sd = x_train.std(axis=0)
    sd = np.where(sd == 0.0, 1.0, sd)
    return lambda x: (x - mu) / sd


def _fit_minmax(x_train):
    lo = x_train.min(axis=0)
    span = x_train.max(axis=0) - lo
    span = np.where(span == 0.0, 1.0, span)
    return lambda x: (x - lo) / span


def _fit_select_k_best(x_train, y_train, k):
    k = min(k, x_train.shape[1])
    corrs = np.zeros(x_train.shape[1])
    y_c = y_train - y_train.mean()
    y_norm = np.sqrt(np.sum(y_c**2))
    for j in range(x_train.shape[1]):
        col = x_train[:, j] - x_train[:, j].mean()
        denom = np.sqrt(np.sum(col**2)) * y_norm
        corrs[j] = abs(np.sum(col * y_c) / denom) if denom > 0 else 0.0
    # stable: ties keep lower column index first
    keep = np.argsort(-corrs, kind="stable")[:k]
    keep = np.sort(keep)
    return lambda x: x[:, keep]


def _fit_ridge(x_train, y_train, alpha):
    mu = x_train.mean(axis=0)
    y_mu = y_train.mean()
    xc = x_train - mu
    d = xc.shape[1]
    w = np.linalg.solve(xc.T @ xc + alpha * np.eye(d), xc.T @ (y_train - y_mu))
    return lambda x: (x - mu) @ w + y_mu


def _fit_knn(x_train, y_train, k, task):
    k = min(k, x_train.shape[0])

    def predict(x):
        out = np.empty(x.shape[0])
        for i in range(x.shape[0]):
            d = np.sum((x_train - x[i]) ** 2, axis=1)
            idx = np.argsort(d, kind="stable")[:k]
            neighbors = y_train[idx]
            if task == "classification":
                vals, counts = np.unique(neighbors, return_counts=True)
                out[i] = vals[np.argmax(counts)]
            else:
                out[i] = neighbors.mean()
        return out

    return predict


def _fit_stump(x_train, y_train):
    """Exhaustive single-feature threshold classifier (majority label per side)."""
    best = None  # (accuracy, feature, threshold, left_label, right_label)
    n, d = x_train.shape
    for j in range(d):
        values = np.unique(x_train[:, j])
        if len(values) < 2:
            continue
        thresholds = (values[:-1] + values[1:]) / 2.0
        for thr in thresholds:
            left = x_train[:, j] <= thr
            for side_labels in [(left, ~left)]:
                lmask, rmask = side_labels
                llab = _majority(y_train[lmask])
                rlab = _majority(y_train[rmask])
                acc = (np.sum(y_train[lmask] == llab) + np.sum(y_train[rmask] == rlab)) / n
                cand = (acc, j, thr, llab, rlab)
                if best is None or acc > best[0]:
                    best = cand
    if best is None:
        lab = _majority(y_train)
        return lambda x: np.full(x.shape[0], lab)
    _, j, thr, llab, rlab = best
    return lambda x: np.where(x[:, j] <= thr, llab, rlab)


def _majority(values):
    if len(values) == 0:
        return 0.0
    vals, counts = np.unique(values, return_counts=True)
    return vals[np.argmax(counts)]


_SINK_TASKS = {
    "ridge": {"regression"},
    "knn": {"classification", "regression"},
    "stump": {"classification"},
}


class ToyMLEvaluator:
    """Executes a pipeline on tabular data with stacking data-flow semantics.

    Sources receive the raw feature matrix; preprocessors transform their
    input; models emit one prediction column; multi-parent nodes receive the
    column-wise concatenation of parent outputs. The sink is scored on a
    seeded 75/25 holdout (F1 for classification, R^2 for regression).
    """

    def __init__(self, dataset: Dataset, seed: int = 0, holdout_fraction: float = 0.25):
        self.dataset = dataset
        self.seed = seed
        rng = np.random.default_rng(seed)
        n = dataset.features.shape[0]
        order = rng.permutation(n)
        n_test = max(1, int(round(n * holdout_fraction)))
        self.test_idx = np.sort(order[:n_test])
        self.train_idx = np.sort(order[n_test:])

    def evaluate(self, pipeline: Pipeline) -> FitnessReport:
        ds = self.dataset
        sink = pipeline.sink()
        allowed = _SINK_TASKS.get(sink.operation)
        if allowed is not None and ds.task not in allowed:
            return invalid_report(pipeline, f"sink {sink.operation!r} incompatible with {ds.task}")

        t0 = time.perf_counter()
        try:
            outputs = {}
            predictors = {}
            y_train = ds.target[self.train_idx]
            for node_id in topological_order(pipeline):
                node = pipeline.node(node_id)
                parents = sorted(pipeline.parents_of(node_id))
                if parents:
                    x_all = np.column_stack([outputs[p] for p in parents])
                else:
                    x_all = ds.features
                if x_all.ndim == 1:
                    x_all = x_all[:, None]
                x_train = x_all[self.train_idx]
                op, params = node.operation, node.params
                if op == "zscore_scaler":
                    fn = _fit_zscore(x_train)
                elif op == "minmax_scaler":
                    fn = _fit_minmax(x_train)
                elif op == "select_k_best":
                    fn = _fit_select_k_best(x_train, y_train, int(params.get("k", 5)))
                elif op == "ridge":
                    fn = _fit_ridge(x_train, y_train, float(params.get("alpha", 1.0)))
                elif op == "knn":
                    fn = _fit_knn(x_train, y_train, int(params.get("k", 5)), ds.task)
                elif op == "stump":
                    if ds.task != "classification":
                        return invalid_report(pipeline, "stump requires classification")
                    fn = _fit_stump(x_train, y_train)
                else:
                    return invalid_report(pipeline, f"unknown operation {op!r}")
                out = fn(x_all)
                outputs[node_id] = out if out.ndim > 1 else out[:, None]
                predictors[node_id] = fn
        except np.linalg.LinAlgError as exc:
            return invalid_report(pipeline, f"numerical failure: {exc}")
        train_seconds = time.perf_counter() - t0

        t1 = time.perf_counter()
        preds = outputs[sink.id][self.test_idx, 0]
        y_test = ds.target[self.test_idx]
        try:
            if ds.task == "classification":
                quality = metric_f1(preds, y_test)
            else:
                quality = metric_r2(preds, y_test)
        except ValueError as exc:
            return invalid_report(pipeline, str(exc))
        inference_seconds = time.perf_counter() - t1

        return FitnessReport(
            quality=quality,
            complexity=structural_complexity(pipeline),
            train_seconds=train_seconds,
            inference_seconds=inference_seconds,
        )

    __call__ = evaluate


# ---------------------------------------------------------------------------
# CSV ingestion


def load_csv(path: str, target_column: str, task: str, name: Optional[str] = None) -> Dataset:
    """Load a comma-separated file into a Dataset.

    Columns that are not fully numeric are label-encoded by first-appearance
    order; rows with unparseable cells in otherwise-numeric columns are
    dropped (with a logged count).
    """
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            rows = [r for r in reader if r]
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    if len(rows) < 2:
        raise DatasetError("file has no data rows")
    header, data = rows[0], rows[1:]
    if target_column not in header:
        raise DatasetError(f"target column {target_column!r} not found")

    columns = {h: [r[i] if i < len(r) else "" for r in data] for i, h in enumerate(header)}

    def parse_column(values):
        """Return (numeric array or None, bad-row mask)."""
        parsed = np.full(len(values), np.nan)
        ok = np.zeros(len(values), dtype=bool)
        for i, v in enumerate(values):
            try:
                parsed[i] = float(v)
                ok[i] = True
            except ValueError:
                pass
        frac = ok.mean() if len(values) else 0.0
        if frac >= 0.9:
            return parsed, ~ok
        # categorical: label-encode by first appearance
        seen = {}
        encoded = np.empty(len(values))
        for i, v in enumerate(values):
            if v not in seen:
                seen[v] = len(seen)
            encoded[i] = seen[v]
        return encoded, np.zeros(len(values), dtype=bool)

    feature_cols = []
    drop_mask = np.zeros(len(data), dtype=bool)
    for h in header:
        col, bad = parse_column(columns[h])
        drop_mask |= bad
        if h != target_column:
            feature_cols.append(col)
        else:
            target = col

    kept = ~drop_mask
    n_dropped = int(drop_mask.sum())
    if n_dropped:
        log.warning("load_csv: dropped %d rows with unparseable values", n_dropped)

    features = np.column_stack(feature_cols)[kept] if feature_cols else np.zeros((kept.sum(), 0))
    target = target[kept]
    if task == "classification":
        target = np.round(target).astype(int).astype(float)
    if features.shape[0] < 10:
        raise DatasetError("too few rows (need >= 10 usable rows)")
    return Dataset(features=features, target=target, task=task, name=name or str(path))
