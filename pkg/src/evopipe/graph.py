"""Pipeline DAG data model, validity rules, structural edits, and export."""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional

if TYPE_CHECKING:
    from .space import OperationCatalog
    from .local_sa import SAReport

FORMAT_VERSION = 1


class PipelineEditError(Exception):
    """A structural edit violates its preconditions."""


class InfeasibleEditError(PipelineEditError):
    """The edit is mechanically possible but the result is not a valid pipeline."""


class ParseError(Exception):
    """A pipeline document could not be parsed."""


@dataclass(frozen=True, eq=True)
class OperationNode:
    """One operation in a pipeline: an id, a catalog operation name, and params."""

    id: str
    operation: str
    params: dict = field(default_factory=dict)

    def with_operation(self, operation: str, params: Optional[dict] = None) -> "OperationNode":
        return OperationNode(self.id, operation, dict(params or {}))


@dataclass(frozen=True, eq=True)
class Pipeline:
    """Immutable DAG of operation nodes with a unique model sink.

    Nodes and edges are stored in canonical (lexicographic) order so that
    structurally equal pipelines compare and serialize identically.
    """

    nodes: tuple
    edges: tuple

    def __init__(self, nodes, edges):
        object.__setattr__(self, "nodes", tuple(sorted(nodes, key=lambda n: n.id)))
        object.__setattr__(self, "edges", tuple(sorted((str(s), str(t)) for s, t in edges)))

    # -- structure helpers ------------------------------------------------

    @property
    def node_ids(self) -> list:
        return [n.id for n in self.nodes]

    def node(self, node_id: str) -> OperationNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def has_node(self, node_id: str) -> bool:
        return any(n.id == node_id for n in self.nodes)

    def parents_of(self, node_id: str) -> list:
        return [s for s, t in self.edges if t == node_id]

    def children_of(self, node_id: str) -> list:
        return [t for s, t in self.edges if s == node_id]

    def sink_ids(self) -> list:
        sources = {s for s, _ in self.edges}
        return [n.id for n in self.nodes if n.id not in sources]

    def sink(self) -> OperationNode:
        sinks = self.sink_ids()
        if len(sinks) != 1:
            raise PipelineEditError(f"pipeline has {len(sinks)} sinks, expected 1")
        return self.node(sinks[0])

    def operations(self) -> list:
        return [n.operation for n in self.nodes]

    def edge_operation_pairs(self) -> list:
        """Edges mapped to (source operation, target operation) pairs."""
        ops = {n.id: n.operation for n in self.nodes}
        return [(ops[s], ops[t]) for s, t in self.edges]

    def fresh_node_id(self, prefix: str = "n") -> str:
        existing = set(self.node_ids)
        i = 0
        while f"{prefix}{i}" in existing:
            i += 1
        return f"{prefix}{i}"


def validate(pipeline: Pipeline, catalog: Optional["OperationCatalog"] = None) -> list:
    """Return the full list of invariant violations (empty list means valid)."""
    violations = []
    ids = [n.id for n in pipeline.nodes]
    if len(ids) != len(set(ids)):
        violations.append("duplicate node ids")
    if not pipeline.nodes:
        violations.append("empty pipeline")
        return violations
    id_set = set(ids)

    for s, t in pipeline.edges:
        if s == t:
            violations.append(f"self-loop on {s}")
        if s not in id_set or t not in id_set:
            violations.append(f"edge ({s},{t}) references missing node")
    if len(pipeline.edges) != len(set(pipeline.edges)):
        violations.append("duplicate edges")

    # Cycle check via Kahn on the well-formed subset of edges.
    edges = [(s, t) for s, t in pipeline.edges if s in id_set and t in id_set and s != t]
    if _has_cycle(id_set, edges):
        violations.append("cycle")

    sinks = [i for i in ids if not any(s == i for s, _ in edges)]
    if len(sinks) != 1:
        violations.append(f"expected exactly one sink, found {len(sinks)}")
    elif catalog is not None:
        sink_op = pipeline.node(sinks[0]).operation
        if sink_op in catalog.names() and not catalog.get(sink_op).may_be_sink:
            violations.append(f"sink operation {sink_op!r} cannot be a sink")

    if len(pipeline.nodes) > 1 and not _weakly_connected(id_set, edges):
        violations.append("not weakly connected")

    if catalog is not None:
        for n in pipeline.nodes:
            if n.operation not in catalog.names():
                violations.append(f"unknown operation {n.operation!r}")

    return violations


def _has_cycle(ids, edges) -> bool:
    indeg = {i: 0 for i in ids}
    for _, t in edges:
        indeg[t] += 1
    queue = [i for i in ids if indeg[i] == 0]
    seen = 0
    while queue:
        u = queue.pop()
        seen += 1
        for s, t in edges:
            if s == u:
                indeg[t] -= 1
                if indeg[t] == 0:
                    queue.append(t)
    return seen != len(ids)


def _weakly_connected(ids, edges) -> bool:
    adj = {i: set() for i in ids}
    for s, t in edges:
        adj[s].add(t)
        adj[t].add(s)
    start = next(iter(ids))
    stack, seen = [start], {start}
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(ids)


def topological_order(pipeline: Pipeline) -> list:
    """Node ids in topological order, ties broken lexicographically."""
    ids = set(pipeline.node_ids)
    indeg = {i: 0 for i in ids}
    children = {i: [] for i in ids}
    for s, t in pipeline.edges:
        indeg[t] += 1
        children[s].append(t)
    heap = [i for i in ids if indeg[i] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        u = heapq.heappop(heap)
        order.append(u)
        for v in children[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(heap, v)
    if len(order) != len(ids):
        raise PipelineEditError("cycle detected")
    return order


def _checked(pipeline: Pipeline, catalog: Optional["OperationCatalog"]) -> Pipeline:
    violations = validate(pipeline, catalog)
    if violations:
        raise InfeasibleEditError("; ".join(violations))
    return pipeline


def delete_node(
    pipeline: Pipeline, node_id: str, catalog: Optional["OperationCatalog"] = None
) -> Pipeline:
    """Remove a node and its incident edges, reconnecting orphaned parents.

    Every former parent of the deleted node gains an edge to the deleted
    node's lexicographically smallest child (if any), so bridge deletions on
    chains stay feasible.
    """
    if not pipeline.has_node(node_id):
        raise PipelineEditError(f"no such node {node_id!r}")
    if len(pipeline.nodes) == 1:
        raise PipelineEditError("cannot empty pipeline")
    parents = pipeline.parents_of(node_id)
    children = sorted(pipeline.children_of(node_id))
    nodes = [n for n in pipeline.nodes if n.id != node_id]
    edges = [(s, t) for s, t in pipeline.edges if s != node_id and t != node_id]
    if children:
        target = children[0]
        for p in parents:
            if (p, target) not in edges:
                edges.append((p, target))
    return _checked(Pipeline(nodes, edges), catalog)


def replace_node(
    pipeline: Pipeline,
    node_id: str,
    new_operation: str,
    catalog: Optional["OperationCatalog"] = None,
) -> Pipeline:
    """Relabel one node; topology is unchanged."""
    if not pipeline.has_node(node_id):
        raise PipelineEditError(f"no such node {node_id!r}")
    params = {}
    if catalog is not None:
        if new_operation not in catalog.names():
            raise PipelineEditError(f"unknown operation {new_operation!r}")
        params = dict(catalog.get(new_operation).default_params)
    nodes = [
        n.with_operation(new_operation, params) if n.id == node_id else n for n in pipeline.nodes
    ]
    return _checked(Pipeline(nodes, pipeline.edges), catalog)


def add_edge(
    pipeline: Pipeline, edge: tuple, catalog: Optional["OperationCatalog"] = None
) -> Pipeline:
    if edge in pipeline.edges:
        raise PipelineEditError(f"edge {edge} already present")
    return _checked(Pipeline(pipeline.nodes, list(pipeline.edges) + [edge]), catalog)


def delete_edge(
    pipeline: Pipeline, edge: tuple, catalog: Optional["OperationCatalog"] = None
) -> Pipeline:
    if edge not in pipeline.edges:
        raise PipelineEditError(f"no such edge {edge}")
    edges = [e for e in pipeline.edges if e != edge]
    return _checked(Pipeline(pipeline.nodes, edges), catalog)


def replace_edge(
    pipeline: Pipeline,
    edge: tuple,
    new_edge: tuple,
    catalog: Optional["OperationCatalog"] = None,
) -> Pipeline:
    """Atomically swap one edge for another; the result must validate."""
    if edge not in pipeline.edges:
        raise PipelineEditError(f"no such edge {edge}")
    if new_edge in pipeline.edges:
        raise PipelineEditError(f"edge {new_edge} already present")
    edges = [e for e in pipeline.edges if e != edge] + [tuple(new_edge)]
    return _checked(Pipeline(pipeline.nodes, edges), catalog)


def structural_complexity(pipeline: Pipeline) -> int:
    """Node count, the secondary optimization objective."""
    return len(pipeline.nodes)


def serialize(pipeline: Pipeline) -> str:
    """Canonical document: equal pipelines produce byte-identical text."""
    doc = {
        "format_version": FORMAT_VERSION,
        "nodes": [
            {"id": n.id, "operation": n.operation, "params": dict(sorted(n.params.items()))}
            for n in pipeline.nodes
        ],
        "edges": [list(e) for e in pipeline.edges],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def deserialize(document: str) -> Pipeline:
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed pipeline document at line {exc.lineno}, col {exc.colno}") from exc
    if not isinstance(doc, dict):
        raise ParseError("pipeline document must be an object")
    for key in ("nodes", "edges"):
        if key not in doc:
            raise ParseError(f"missing field {key!r}")
    try:
        nodes = [
            OperationNode(str(n["id"]), str(n["operation"]), dict(n.get("params", {})))
            for n in doc["nodes"]
        ]
        edges = [(str(e[0]), str(e[1])) for e in doc["edges"]]
    except (KeyError, TypeError, IndexError) as exc:
        raise ParseError(f"malformed pipeline document: {exc}") from exc
    return Pipeline(nodes, edges)


def to_dot(pipeline: Pipeline, sa_report: Optional["SAReport"] = None) -> str:
    """DOT export; with a sensitivity report, annotate deletion indices.

    Positive index (deletion helps) gets a warm fill, negative (protective)
    a green fill.
    """
    node_index = {}
    edge_index = {}
    if sa_report is not None:
        for rec in sa_report.records:
            if rec.action != "delete" or not rec.feasible:
                continue
            if rec.kind == "node":
                node_index[rec.target] = rec.index
            else:
                edge_index[tuple(rec.target)] = rec.index

    lines = ["digraph pipeline {", "  rankdir=LR;"]
    for n in pipeline.nodes:
        attrs = [f'label="{n.operation}"']
        if n.id in node_index:
            s = node_index[n.id]
            attrs[0] = f'label="{n.operation}\\nS={s:.3f}"'
            attrs.append('style=filled')
            attrs.append(f'fillcolor="{"salmon" if s > 0 else "palegreen"}"')
        lines.append(f'  "{n.id}" [{", ".join(attrs)}];')
    for s, t in pipeline.edges:
        attrs = ""
        if (s, t) in edge_index:
            v = edge_index[(s, t)]
            color = "red" if v > 0 else "darkgreen"
            attrs = f' [label="S={v:.3f}", color="{color}"]'
        lines.append(f'  "{s}" -> "{t}"{attrs};')
    lines.append("}")
    return "\n".join(lines) + "\n"
