"""Operation catalog, structural constraints, and random pipeline generation."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Optional

from .graph import OperationNode, Pipeline, validate


class ConfigurationError(Exception):
    """Catalog or constraint configuration cannot be satisfied."""


@dataclass(frozen=True)
class OperationSpec:
    name: str
    kind: str  # "preprocessor" | "model"
    may_be_sink: bool = False
    default_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("preprocessor", "model"):
            raise ConfigurationError(f"unknown kind {self.kind!r}")
        if self.may_be_sink and self.kind != "model":
            raise ConfigurationError(f"{self.name}: only models may be sinks")


class OperationCatalog:
    """Immutable name -> OperationSpec lookup."""

    def __init__(self, specs):
        self._specs = {s.name: s for s in specs}
        if not any(s.may_be_sink for s in self._specs.values()):
            raise ConfigurationError("catalog has no sink-capable operation")

    def names(self) -> list:
        return sorted(self._specs)

    def get(self, name: str) -> OperationSpec:
        return self._specs[name]

    def __contains__(self, name: str) -> bool:
        return name in self._specs

    def __len__(self) -> int:
        return len(self._specs)

    def sink_operations(self) -> list:
        return sorted(n for n, s in self._specs.items() if s.may_be_sink)

    def by_kind(self, kind: str) -> list:
        return sorted(n for n, s in self._specs.items() if s.kind == kind)


@dataclass(frozen=True)
class StructuralConstraints:
    max_nodes: int = 6
    max_depth: int = 4
    max_parents_per_node: int = 3

    def __post_init__(self):
        for f in ("max_nodes", "max_depth", "max_parents_per_node"):
            if getattr(self, f) < 1:
                raise ConfigurationError(f"{f} must be >= 1")


def default_catalog() -> OperationCatalog:
    """Built-in six-operation catalog: three preprocessors, three models."""
    return OperationCatalog(
        [
            OperationSpec("zscore_scaler", "preprocessor"),
            OperationSpec("minmax_scaler", "preprocessor"),
            OperationSpec("select_k_best", "preprocessor", default_params={"k": 5}),
            OperationSpec("ridge", "model", may_be_sink=True, default_params={"alpha": 1.0}),
            OperationSpec("knn", "model", may_be_sink=True, default_params={"k": 5}),
            OperationSpec("stump", "model", may_be_sink=True),
        ]
    )


def load_catalog(path: str) -> OperationCatalog:
    """Read a catalog override file (JSON list of operation specs)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    specs = [
        OperationSpec(
            str(item["name"]),
            str(item["kind"]),
            bool(item.get("may_be_sink", False)),
            dict(item.get("default_params", {})),
        )
        for item in doc
    ]
    return OperationCatalog(specs)


def candidate_operations(
    catalog: OperationCatalog,
    is_sink: bool = False,
    parent_kinds: Optional[list] = None,
    child_kinds: Optional[list] = None,
) -> list:
    """Operations that can legally occupy a position with the given context."""
    if is_sink:
        return catalog.sink_operations()
    return catalog.names()


def _depths_to_sink(pipeline: Pipeline) -> dict:
    """Longest path (in edges) from each node down to the sink."""
    from .graph import topological_order

    depth = {i: 0 for i in pipeline.node_ids}
    for node_id in reversed(topological_order(pipeline)):
        for p in pipeline.parents_of(node_id):
            depth[p] = max(depth[p], depth[node_id] + 1)
    return depth


def random_pipeline(
    catalog: OperationCatalog,
    constraints: StructuralConstraints,
    rng_seed,
) -> Pipeline:
    """Sample a valid pipeline by growing parents backwards from a model sink.

    Deterministic given the seed. Internal (non-sink) nodes are drawn 50/50
    preprocessor/model when both kinds exist.
    """
    rng = rng_seed if isinstance(rng_seed, random.Random) else random.Random(rng_seed)
    sinks = catalog.sink_operations()
    if not sinks:
        raise ConfigurationError("no sink-capable operations in catalog")

    target_nodes = rng.randint(1, constraints.max_nodes)
    counter = 0
    sink = OperationNode(f"n{counter}", rng.choice(sinks))
    counter += 1
    nodes = [sink]
    edges = []
    pipe = Pipeline(nodes, edges)

    preprocessors = catalog.by_kind("preprocessor")
    models = catalog.by_kind("model")

    while len(nodes) < target_nodes:
        depths = _depths_to_sink(pipe)
        attach_points = [
            n.id
            for n in nodes
            if len(pipe.parents_of(n.id)) < constraints.max_parents_per_node
            and depths[n.id] + 1 <= constraints.max_depth - 1
        ]
        if not attach_points:
            break
        target = rng.choice(sorted(attach_points))
        if preprocessors and models:
            pool = preprocessors if rng.random() < 0.5 else models
        else:
            pool = preprocessors or models
        new = OperationNode(f"n{counter}", rng.choice(pool))
        counter += 1
        nodes = nodes + [new]
        edges = edges + [(new.id, target)]
        pipe = Pipeline(nodes, edges)

    violations = validate(pipe, catalog)
    if violations:
        raise ConfigurationError(f"generator produced invalid pipeline: {violations}")
    return pipe
