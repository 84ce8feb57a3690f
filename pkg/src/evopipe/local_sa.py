"""Local sensitivity analysis: per-node and per-edge deletion/replacement indices.

The index of an edit is S = 1 - Q_before / Q_after, computed after an affine
positivity shift that keeps the ratio's denominator above a small epsilon
(negated-error metrics can make Q non-positive). Positive S means the edit
improves quality, i.e. the target is redundant or harmful.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Optional

from .graph import (
    InfeasibleEditError,
    Pipeline,
    PipelineEditError,
    delete_edge,
    delete_node,
    replace_edge,
    replace_node,
    serialize,
)

POSITIVITY_EPS = 1e-9

DEFAULT_CADENCE_K = 5
DEFAULT_TOP_N = 3
DEFAULT_THRESHOLD = 0.0
DEFAULT_CANDIDATE_BUDGET = 3


@dataclass(frozen=True)
class SensitivityRecord:
    kind: str  # "node" | "edge"
    target: object  # node id (str) or edge (tuple)
    action: str  # "delete" | "replace"
    replacement: object = None  # operation name or edge, for replace actions
    index: float = 0.0
    quality_before: float = 0.0
    quality_after: float = 0.0
    feasible: bool = True


@dataclass(frozen=True)
class SAReport:
    pipeline: Pipeline
    baseline_quality: float
    records: tuple

    def feasible_records(self) -> list:
        return [r for r in self.records if r.feasible]

    def best_record(self) -> Optional[SensitivityRecord]:
        feasible = self.feasible_records()
        if not feasible:
            return None
        return max(feasible, key=lambda r: r.index)

    def to_document(self) -> str:
        doc = {
            "baseline_quality": self.baseline_quality,
            "pipeline": json.loads(serialize(self.pipeline)),
            "records": [
                {
                    "kind": r.kind,
                    "target": list(r.target) if isinstance(r.target, tuple) else r.target,
                    "action": r.action,
                    "replacement": (
                        list(r.replacement) if isinstance(r.replacement, tuple) else r.replacement
                    ),
                    "index": r.index,
                    "quality_before": r.quality_before,
                    "quality_after": r.quality_after,
                    "feasible": r.feasible,
                }
                for r in self.records
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def sensitivity_index(quality_before: float, quality_after: float) -> float:
    """1 - Q_before/Q_after with an affine shift guarding non-positive Q."""
    lo = min(quality_before, quality_after)
    shift = POSITIVITY_EPS - lo if lo < POSITIVITY_EPS else 0.0
    return 1.0 - (quality_before + shift) / (quality_after + shift)


def _probe(pipeline, baseline, evaluator, edit, kind, target, action, replacement=None):
    try:
        edited = edit()
    except PipelineEditError:
        return SensitivityRecord(
            kind=kind,
            target=target,
            action=action,
            replacement=replacement,
            quality_before=baseline,
            feasible=False,
        )
    report = evaluator.evaluate(edited)
    if not report.valid:
        return SensitivityRecord(
            kind=kind,
            target=target,
            action=action,
            replacement=replacement,
            quality_before=baseline,
            feasible=False,
        )
    return SensitivityRecord(
        kind=kind,
        target=target,
        action=action,
        replacement=replacement,
        index=sensitivity_index(baseline, report.quality),
        quality_before=baseline,
        quality_after=report.quality,
        feasible=True,
    )


def node_deletion_index(pipeline, node_id, evaluator, catalog=None, baseline=None):
    if baseline is None:
        baseline = evaluator.evaluate(pipeline).quality
    return _probe(
        pipeline,
        baseline,
        evaluator,
        lambda: delete_node(pipeline, node_id, catalog),
        "node",
        node_id,
        "delete",
    )


def node_replacement_index(pipeline, node_id, replacement_op, evaluator, catalog=None, baseline=None):
    if baseline is None:
        baseline = evaluator.evaluate(pipeline).quality
    return _probe(
        pipeline,
        baseline,
        evaluator,
        lambda: replace_node(pipeline, node_id, replacement_op, catalog),
        "node",
        node_id,
        "replace",
        replacement=replacement_op,
    )


def edge_deletion_index(pipeline, edge, evaluator, catalog=None, baseline=None):
    if baseline is None:
        baseline = evaluator.evaluate(pipeline).quality
    return _probe(
        pipeline,
        baseline,
        evaluator,
        lambda: delete_edge(pipeline, edge, catalog),
        "edge",
        tuple(edge),
        "delete",
    )


def edge_replacement_index(pipeline, edge, candidate_edge, evaluator, catalog=None, baseline=None):
    if baseline is None:
        baseline = evaluator.evaluate(pipeline).quality
    return _probe(
        pipeline,
        baseline,
        evaluator,
        lambda: replace_edge(pipeline, edge, candidate_edge, catalog),
        "edge",
        tuple(edge),
        "replace",
        replacement=tuple(candidate_edge),
    )


def _replacement_candidates(pipeline, node_id, catalog, budget, rng):
    from .space import candidate_operations

    is_sink = node_id == pipeline.sink().id
    current = pipeline.node(node_id).operation
    pool = [op for op in candidate_operations(catalog, is_sink=is_sink) if op != current]
    if len(pool) <= budget:
        return pool
    return sorted(rng.sample(pool, budget))


def _edge_candidates(pipeline, edge, budget, rng):
    """Feasible-looking non-edges, sampled deterministically; feasibility is
    settled by the probe itself."""
    ids = pipeline.node_ids
    existing = set(pipeline.edges)
    pool = [
        (a, b)
        for a in ids
        for b in ids
        if a != b and (a, b) not in existing and (a, b) != tuple(edge)
    ]
    if len(pool) <= budget:
        return sorted(pool)
    return sorted(rng.sample(pool, budget))


def full_sweep(
    pipeline: Pipeline,
    evaluator,
    catalog,
    candidate_budget: int = DEFAULT_CANDIDATE_BUDGET,
    seed: int = 0,
) -> SAReport:
    """Run node deletion, node replacement, edge deletion, edge replacement,
    in that order, over the whole pipeline.

    Costs one evaluator call for the baseline plus one per feasible record.
    """
    rng = random.Random(seed)
    baseline = evaluator.evaluate(pipeline).quality
    records = []

    node_ids = sorted(pipeline.node_ids)
    edges = sorted(pipeline.edges)

    for node_id in node_ids:
        records.append(node_deletion_index(pipeline, node_id, evaluator, catalog, baseline))
    for node_id in node_ids:
        for op in _replacement_candidates(pipeline, node_id, catalog, candidate_budget, rng):
            records.append(
                node_replacement_index(pipeline, node_id, op, evaluator, catalog, baseline)
            )
    for edge in edges:
        records.append(edge_deletion_index(pipeline, edge, evaluator, catalog, baseline))
    for edge in edges:
        for cand in _edge_candidates(pipeline, edge, candidate_budget, rng):
            records.append(
                edge_replacement_index(pipeline, edge, cand, evaluator, catalog, baseline)
            )

    return SAReport(pipeline=pipeline, baseline_quality=baseline, records=tuple(records))


def _apply_record(pipeline, record, catalog):
    if record.kind == "node" and record.action == "delete":
        return delete_node(pipeline, record.target, catalog)
    if record.kind == "node" and record.action == "replace":
        return replace_node(pipeline, record.target, record.replacement, catalog)
    if record.kind == "edge" and record.action == "delete":
        return delete_edge(pipeline, tuple(record.target), catalog)
    if record.kind == "edge" and record.action == "replace":
        return replace_edge(pipeline, tuple(record.target), tuple(record.replacement), catalog)
    raise ValueError(f"unknown record ({record.kind}, {record.action})")


def _edit_neighborhood(pipeline, record):
    """Node ids whose sensitivity records the edit may invalidate."""
    if record.kind == "node":
        ids = {record.target}
        ids.update(pipeline.parents_of(record.target))
        ids.update(pipeline.children_of(record.target))
    else:
        ids = set(record.target)
    return ids


def _record_touches(record, node_ids):
    if record.kind == "node":
        return record.target in node_ids
    return record.target[0] in node_ids or record.target[1] in node_ids


def _reprobe_neighborhood(pipeline, node_ids, evaluator, catalog, budget, seed, threshold, baseline):
    """Fresh deletion and node-replacement indices for the surviving
    neighborhood of an edit."""
    rng = random.Random(seed)
    records = []
    for node_id in sorted(node_ids):
        if not pipeline.has_node(node_id):
            continue
        records.append(node_deletion_index(pipeline, node_id, evaluator, catalog, baseline))
        for op in _replacement_candidates(pipeline, node_id, catalog, budget, rng):
            records.append(
                node_replacement_index(pipeline, node_id, op, evaluator, catalog, baseline)
            )
    for edge in sorted(pipeline.edges):
        if edge[0] in node_ids or edge[1] in node_ids:
            records.append(edge_deletion_index(pipeline, edge, evaluator, catalog, baseline))
    return [r for r in records if r.feasible and r.index > threshold]


def apply_simplifications(
    pipeline: Pipeline,
    report: SAReport,
    threshold: float = DEFAULT_THRESHOLD,
    evaluator=None,
    catalog=None,
    candidate_budget: int = DEFAULT_CANDIDATE_BUDGET,
    seed: int = 0,
    max_rounds: Optional[int] = None,
) -> Pipeline:
    """Greedily apply the feasible action with the largest index while it
    exceeds the threshold.

    Lazy-greedy: each candidate edit is re-verified against the current graph
    with one evaluator call before acceptance, and after an accepted edit only
    the affected neighborhood's deletion indices are re-probed. Record indices
    elsewhere serve as stale priorities, never as acceptance evidence, so with
    threshold >= 0 on a deterministic evaluator quality never decreases.
    """
    if evaluator is None or catalog is None:
        raise ValueError("apply_simplifications needs evaluator and catalog for verification")
    if max_rounds is None:
        max_rounds = 2 * len(pipeline.nodes) + 4

    current = pipeline
    baseline = report.baseline_quality
    pool = [r for r in report.feasible_records() if r.index > threshold]
    accepted = 0
    while pool and accepted < max_rounds:
        pool.sort(
            key=lambda r: (-r.index, r.kind, r.action, str(r.target), str(r.replacement))
        )
        record = pool.pop(0)
        if record.index <= threshold:
            break
        try:
            edited = _apply_record(current, record, catalog)
        except PipelineEditError:
            continue
        fitness = evaluator.evaluate(edited)
        if not fitness.valid or sensitivity_index(baseline, fitness.quality) <= threshold:
            continue
        touched = _edit_neighborhood(current, record)
        current = edited
        baseline = fitness.quality
        accepted += 1
        pool = [r for r in pool if not _record_touches(r, touched)]
        pool.extend(
            _reprobe_neighborhood(
                current, touched, evaluator, catalog, candidate_budget, seed, threshold, baseline
            )
        )
    return current


def sa_evolution_hook(
    population,
    generation: int,
    evaluator,
    catalog,
    cadence_k: int = DEFAULT_CADENCE_K,
    top_n: int = DEFAULT_TOP_N,
    threshold: float = DEFAULT_THRESHOLD,
    candidate_budget: int = DEFAULT_CANDIDATE_BUDGET,
    seed: int = 0,
    memo: Optional[set] = None,
):
    """Every cadence_k-th generation, simplify the top_n best individuals.

    Returns a new population list; touched individuals carry lineage tag
    "sa" and re-evaluated fitness. Untouched generations return the input
    list unchanged. A caller-held memo set of canonical documents skips
    pipelines already simplified to a fixed point (sound on deterministic
    evaluators, where re-analysis cannot produce a different outcome).
    """
    from .optimizer import Individual

    if generation % cadence_k != 0 or generation == 0:
        return population

    ranked = sorted(
        range(len(population)),
        key=lambda i: (population[i].fitness.valid, population[i].fitness.quality),
        reverse=True,
    )
    new_population = list(population)
    touched = 0
    for i in ranked:
        if touched >= top_n:
            break
        ind = population[i]
        if not ind.fitness.valid:
            continue
        doc = serialize(ind.pipeline)
        if memo is not None and doc in memo:
            # already at a simplification fixed point; analyze the next best
            # individual instead of re-deriving a guaranteed no-op
            continue
        touched += 1
        report = full_sweep(ind.pipeline, evaluator, catalog, candidate_budget, seed)
        simplified = apply_simplifications(
            ind.pipeline, report, threshold, evaluator, catalog, candidate_budget, seed
        )
        if memo is not None:
            memo.add(doc)
            memo.add(serialize(simplified))
        if simplified == ind.pipeline:
            continue
        fitness = evaluator.evaluate(simplified)
        new_population[i] = Individual(
            pipeline=simplified,
            fitness=fitness,
            operator="sa",
            parents=(ind.uid,),
        )
    return new_population
