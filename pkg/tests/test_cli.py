import json

from click.testing import CliRunner

from evopipe.cli import main
from evopipe.global_sa import HistoryStore, make_history_record
from evopipe.graph import OperationNode, Pipeline, serialize
from evopipe.space import StructuralConstraints, default_catalog, random_pipeline

CATALOG = default_catalog()


def run(args, **kwargs):
    return CliRunner().invoke(main, args, catch_exceptions=False, **kwargs)


def write_pipeline(path, pipeline):
    path.write_text(serialize(pipeline) + "\n")


def seeded_history(path, n=30):
    store = HistoryStore(path)
    constraints = StructuralConstraints()
    for i in range(n):
        p = random_pipeline(CATALOG, constraints, i)
        store.append(make_history_record("r0", "d0", p, i / n, timestamp=0.0))


class TestEvolve:
    def test_writes_artifacts(self, tmp_path):
        out = tmp_path / "out"
        result = run(
            ["evolve", "--seed", "3", "--generations", "4", "--population", "8", "--out", str(out)]
        )
        assert result.exit_code == 0
        assert (out / "best_pipeline.json").exists()
        assert (out / "pareto_front.json").exists()
        assert (out / "convergence.csv").exists()
        assert "best quality" in result.output

    def test_rerun_byte_identical(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            result = run(
                [
                    "evolve",
                    "--seed",
                    "7",
                    "--generations",
                    "5",
                    "--population",
                    "10",
                    "--out",
                    str(out),
                ]
            )
            assert result.exit_code == 0
            outs.append(out)
        for artifact in ("best_pipeline.json", "pareto_front.json", "convergence.csv"):
            assert (outs[0] / artifact).read_bytes() == (outs[1] / artifact).read_bytes()

    def test_convergence_csv_shape(self, tmp_path):
        out = tmp_path / "out"
        run(["evolve", "--seed", "1", "--generations", "3", "--population", "6", "--out", str(out)])
        lines = (out / "convergence.csv").read_text().splitlines()
        assert lines[0] == "generation,wall_seconds,best_quality,mean_quality,best_complexity"
        assert len(lines) == 1 + 4  # generation 0 plus three evolved generations

    def test_missing_dataset_exits_2(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps(
                {
                    "evaluator": {
                        "type": "toy_ml",
                        "dataset": {"path": str(tmp_path / "none.csv"), "target": "y", "task": "regression"},
                    }
                }
            )
        )
        result = run(["evolve", "--config", str(cfg), "--out", str(tmp_path / "out")])
        assert result.exit_code == 2
        assert "not found" in result.output

    def test_history_appended(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        hist = tmp_path / "h.jsonl"
        cfg.write_text(json.dumps({"history_path": str(hist)}))
        result = run(
            [
                "evolve",
                "--config",
                str(cfg),
                "--seed",
                "2",
                "--generations",
                "3",
                "--population",
                "6",
                "--out",
                str(tmp_path / "out"),
            ]
        )
        assert result.exit_code == 0
        records, warnings = HistoryStore(hist).load()
        assert warnings == []
        assert len(records) >= 6


class TestAnalyze:
    def test_valid_pipeline(self, tmp_path):
        pfile = tmp_path / "p.json"
        write_pipeline(pfile, random_pipeline(CATALOG, StructuralConstraints(), 4))
        out = tmp_path / "out"
        result = run(["analyze", str(pfile), "--out", str(out)])
        assert result.exit_code == 0
        assert "baseline quality" in result.output
        report = json.loads((out / "sa_report.json").read_text())
        assert report["records"]
        dot = (out / "pipeline_annotated.dot").read_text()
        assert dot.startswith("digraph") and "->" in dot

    def test_invalid_pipeline_exits_2(self, tmp_path):
        pfile = tmp_path / "p.json"
        write_pipeline(pfile, Pipeline([OperationNode("a", "zscore_scaler")], []))
        result = run(["analyze", str(pfile), "--out", str(tmp_path / "out")])
        assert result.exit_code == 2
        assert "invalid pipeline" in result.output

    def test_missing_file_exits_2(self, tmp_path):
        result = run(["analyze", str(tmp_path / "nope.json")])
        assert result.exit_code == 2


class TestSuggest:
    def test_table_and_context(self, tmp_path):
        hist = tmp_path / "h.jsonl"
        seeded_history(hist)
        result = run(["suggest", str(hist), "--parent", "zscore_scaler", "--child", "ridge"])
        assert result.exit_code == 0
        assert "weighted candidates" in result.output

    def test_empty_history_exits_2(self, tmp_path):
        hist = tmp_path / "h.jsonl"
        hist.write_text("")
        result = run(["suggest", str(hist)])
        assert result.exit_code == 2

    def test_missing_history_exits_2(self, tmp_path):
        result = run(["suggest", str(tmp_path / "nope.jsonl")])
        assert result.exit_code == 2


class TestBench:
    def test_summary_written(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"evolution": {"population_size": 6, "max_generations": 3}}))
        out = tmp_path / "out"
        result = run(["bench", "--config", str(cfg), "--repeats", "2", "--out", str(out)])
        assert result.exit_code == 0
        lines = (out / "bench_summary.csv").read_text().splitlines()
        assert len(lines) == 4  # header + three arms
        arms = {line.split(",")[1] for line in lines[1:]}
        assert arms == {"plain", "local_sa", "global_sa"}

    def test_single_repeat_rejected(self, tmp_path):
        result = run(["bench", "--repeats", "1"])
        assert result.exit_code == 2


class TestHistory:
    def test_list_counts(self, tmp_path):
        hist = tmp_path / "h.jsonl"
        seeded_history(hist, n=12)
        result = run(["history", "list", str(hist)])
        assert result.exit_code == 0
        assert "r0\td0\t12 records" in result.output

    def test_inspect_sorted_and_limited(self, tmp_path):
        hist = tmp_path / "h.jsonl"
        seeded_history(hist, n=12)
        result = run(["history", "inspect", str(hist), "--limit", "3"])
        assert result.exit_code == 0
        lines = result.output.strip().splitlines()
        assert len(lines) == 3
        fits = [float(line.split("fitness=")[1].split("\t")[0]) for line in lines]
        assert fits == sorted(fits, reverse=True)

    def test_missing_file_exits_2(self, tmp_path):
        result = run(["history", "list", str(tmp_path / "nope.jsonl")])
        assert result.exit_code == 2


class TestExportDot:
    def test_stdout(self, tmp_path):
        pfile = tmp_path / "p.json"
        p = random_pipeline(CATALOG, StructuralConstraints(), 1)
        write_pipeline(pfile, p)
        result = run(["export-dot", str(pfile)])
        assert result.exit_code == 0
        for node in p.nodes:
            assert node.id in result.output

    def test_out_file(self, tmp_path):
        pfile = tmp_path / "p.json"
        write_pipeline(pfile, random_pipeline(CATALOG, StructuralConstraints(), 1))
        target = tmp_path / "g.dot"
        result = run(["export-dot", str(pfile), "--out", str(target)])
        assert result.exit_code == 0
        assert target.read_text().startswith("digraph")
