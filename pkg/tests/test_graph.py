import random

import pytest

from evopipe.graph import (
    InfeasibleEditError,
    OperationNode,
    ParseError,
    Pipeline,
    PipelineEditError,
    delete_edge,
    delete_node,
    deserialize,
    replace_edge,
    replace_node,
    serialize,
    structural_complexity,
    to_dot,
    topological_order,
    validate,
)
from evopipe.local_sa import SAReport, SensitivityRecord
from evopipe.space import StructuralConstraints, default_catalog, random_pipeline

CATALOG = default_catalog()


def chain(*ops):
    nodes = [OperationNode(f"{chr(97 + i)}", op) for i, op in enumerate(ops)]
    edges = [(nodes[i].id, nodes[i + 1].id) for i in range(len(nodes) - 1)]
    return Pipeline(nodes, edges)


def diamond():
    nodes = [
        OperationNode("a", "zscore_scaler"),
        OperationNode("b", "minmax_scaler"),
        OperationNode("c", "select_k_best"),
        OperationNode("d", "ridge"),
    ]
    return Pipeline(nodes, [("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")])


class TestValidate:
    def test_valid_chain(self):
        assert validate(chain("zscore_scaler", "minmax_scaler", "ridge"), CATALOG) == []

    def test_cycle_reported(self):
        p = Pipeline(
            [OperationNode("a", "ridge"), OperationNode("b", "knn")],
            [("a", "b"), ("b", "a")],
        )
        assert any("cycle" in v for v in validate(p, CATALOG))

    def test_two_sinks_disconnected(self):
        p = Pipeline(
            [
                OperationNode("a", "zscore_scaler"),
                OperationNode("b", "minmax_scaler"),
                OperationNode("c", "ridge"),
                OperationNode("d", "knn"),
            ],
            [("a", "c"), ("b", "d")],
        )
        violations = validate(p, CATALOG)
        assert any("sink" in v for v in violations)
        assert any("connected" in v for v in violations)

    def test_all_violations_reported_not_just_first(self):
        p = Pipeline(
            [OperationNode("a", "nonsense"), OperationNode("b", "zscore_scaler")],
            [("a", "a"), ("a", "b"), ("x", "b")],
        )
        violations = validate(p, CATALOG)
        assert len(violations) >= 3

    def test_preprocessor_sink_rejected(self):
        p = chain("ridge", "zscore_scaler")
        assert any("cannot be a sink" in v for v in validate(p, CATALOG))


class TestTopologicalOrder:
    def test_chain(self):
        assert topological_order(chain("zscore_scaler", "minmax_scaler", "ridge")) == ["a", "b", "c"]

    def test_diamond_lexicographic_ties(self):
        assert topological_order(diamond()) == ["a", "b", "c", "d"]

    def test_single_node(self):
        p = Pipeline([OperationNode("x", "ridge")], [])
        assert topological_order(p) == ["x"]

    def test_consistent_with_edges_on_random_dags(self):
        for seed in range(60):
            p = random_pipeline(CATALOG, StructuralConstraints(max_nodes=50, max_depth=10, max_parents_per_node=4), seed)
            order = topological_order(p)
            pos = {n: i for i, n in enumerate(order)}
            assert all(pos[s] < pos[t] for s, t in p.edges)
            # determinism
            assert order == topological_order(p)


class TestDeleteNode:
    def test_chain_bridge_reconnection(self):
        p = delete_node(chain("zscore_scaler", "minmax_scaler", "ridge"), "b", CATALOG)
        assert p.edges == (("a", "c"),)

    def test_diamond_reconnects_parent_to_smallest_child(self):
        p = delete_node(diamond(), "b", CATALOG)
        assert set(p.edges) == {("a", "c"), ("c", "d"), ("a", "d")}

    def test_delete_leaf_source(self):
        p = delete_node(chain("zscore_scaler", "minmax_scaler", "ridge"), "a", CATALOG)
        assert p.edges == (("b", "c"),)
        assert validate(p, CATALOG) == []

    def test_cannot_empty_pipeline(self):
        p = Pipeline([OperationNode("a", "ridge")], [])
        with pytest.raises(PipelineEditError):
            delete_node(p, "a", CATALOG)

    def test_missing_node(self):
        with pytest.raises(PipelineEditError):
            delete_node(diamond(), "zzz", CATALOG)


class TestReplaceNode:
    def test_sink_model_swap_keeps_edges(self):
        p = chain("zscore_scaler", "minmax_scaler", "knn")
        q = replace_node(p, "c", "ridge", CATALOG)
        assert q.edges == p.edges
        assert q.node("c").operation == "ridge"

    def test_preprocessor_to_model_internal(self):
        q = replace_node(diamond(), "b", "knn", CATALOG)
        assert validate(q, CATALOG) == []

    def test_unknown_operation(self):
        with pytest.raises(PipelineEditError):
            replace_node(diamond(), "b", "made_up", CATALOG)

    def test_preprocessor_cannot_become_sink(self):
        p = chain("zscore_scaler", "ridge")
        with pytest.raises(PipelineEditError):
            replace_node(p, "b", "minmax_scaler", CATALOG)


class TestEdgeEdits:
    def test_delete_feasible_makes_second_source(self):
        # b loses its only parent and becomes a source: allowed.
        q = delete_edge(diamond(), ("a", "b"), CATALOG)
        assert validate(q, CATALOG) == []
        assert ("a", "b") not in q.edges

    def test_delete_disconnecting_is_infeasible(self):
        p = chain("zscore_scaler", "minmax_scaler", "ridge")
        with pytest.raises(InfeasibleEditError):
            delete_edge(p, ("b", "c"), CATALOG)

    def test_replace_ok(self):
        q = replace_edge(diamond(), ("a", "b"), ("c", "b"), CATALOG)
        assert ("c", "b") in q.edges and ("a", "b") not in q.edges
        assert validate(q, CATALOG) == []

    def test_replace_creating_cycle_infeasible(self):
        with pytest.raises(InfeasibleEditError):
            replace_edge(diamond(), ("a", "b"), ("d", "b"), CATALOG)

    def test_missing_edge(self):
        with pytest.raises(PipelineEditError):
            delete_edge(diamond(), ("a", "d"), CATALOG)


class TestComplexity:
    def test_counts(self):
        assert structural_complexity(Pipeline([OperationNode("a", "ridge")], [])) == 1
        assert structural_complexity(diamond()) == 4
        assert structural_complexity(chain("zscore_scaler", "minmax_scaler", "ridge")) == 3


class TestSerialization:
    def test_round_trip_identity(self):
        for seed in range(30):
            p = random_pipeline(CATALOG, StructuralConstraints(), seed)
            assert deserialize(serialize(p)) == p

    def test_canonical_under_permutation(self):
        nodes = [
            OperationNode("a", "zscore_scaler"),
            OperationNode("b", "ridge", {"alpha": 1.0}),
        ]
        p1 = Pipeline(nodes, [("a", "b")])
        p2 = Pipeline(list(reversed(nodes)), [("a", "b")])
        assert serialize(p1) == serialize(p2)

    def test_truncated_document(self):
        doc = serialize(diamond())
        with pytest.raises(ParseError):
            deserialize(doc[: len(doc) // 2])

    def test_missing_field(self):
        with pytest.raises(ParseError):
            deserialize('{"nodes": []}')


class TestDot:
    def test_chain_statement_counts(self):
        p = chain("zscore_scaler", "ridge")
        dot = to_dot(p)
        assert dot.count("->") == 1
        assert dot.count("label=") == 2

    def test_sa_annotation_three_decimals(self):
        p = chain("zscore_scaler", "ridge")
        rec = SensitivityRecord(
            kind="node", target="a", action="delete", index=0.16666,
            quality_before=0.75, quality_after=0.9, feasible=True,
        )
        report = SAReport(pipeline=p, baseline_quality=0.75, records=(rec,))
        dot = to_dot(p, report)
        assert "S=0.167" in dot
        assert "salmon" in dot

    def test_empty_report_plain_export(self):
        p = chain("zscore_scaler", "ridge")
        report = SAReport(pipeline=p, baseline_quality=0.5, records=())
        assert to_dot(p, report) == to_dot(p)


class TestEditClosure:
    def test_random_edit_sequences_never_leak_invalid(self):
        rng = random.Random(5)
        for seed in range(40):
            p = random_pipeline(CATALOG, StructuralConstraints(), seed)
            for _ in range(15):
                kind = rng.choice(["del_node", "repl_node", "del_edge", "repl_edge"])
                try:
                    if kind == "del_node":
                        p2 = delete_node(p, rng.choice(p.node_ids), CATALOG)
                    elif kind == "repl_node":
                        p2 = replace_node(p, rng.choice(p.node_ids), rng.choice(CATALOG.names()), CATALOG)
                    elif kind == "del_edge" and p.edges:
                        p2 = delete_edge(p, rng.choice(p.edges), CATALOG)
                    elif kind == "repl_edge" and p.edges:
                        old = rng.choice(p.edges)
                        new = (rng.choice(p.node_ids), rng.choice(p.node_ids))
                        p2 = replace_edge(p, old, new, CATALOG)
                    else:
                        continue
                except PipelineEditError:
                    continue
                assert validate(p2, CATALOG) == []
                p = p2
