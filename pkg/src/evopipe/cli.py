"""Command-line surface: run orchestration, reports, and exports."""

from __future__ import annotations

import csv
import json
import os
import statistics
import sys

import click

from . import __version__
from .evaluation import CountingEvaluator, DatasetError, SyntheticEvaluator, ToyMLEvaluator, load_csv
from .global_sa import (
    HistoryError,
    HistoryStore,
    MetaModelAdvisor,
    SuitabilityAdvisor,
    build_suitability_table,
    choose_node_directed,
    fit_meta_model,
    make_history_record,
)
from .graph import ParseError, deserialize, serialize, to_dot, validate
from .local_sa import full_sweep
from .optimizer import EvolutionConfig, evolve
from .space import ConfigurationError, StructuralConstraints, default_catalog, load_catalog

# One logical second per thousand evaluator calls: keeps the convergence CSV
# byte-reproducible in serial runs while preserving the fitness-vs-time shape.
LOGICAL_SECONDS_PER_EVAL = 0.001


def _fail(message: str, code: int = 2):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        _fail(f"cannot read config: {exc}")
    except json.JSONDecodeError as exc:
        _fail(f"malformed config {path}: {exc}")


def _build_catalog(cfg):
    if cfg.get("catalog_path"):
        return load_catalog(cfg["catalog_path"])
    return default_catalog()


def _build_evaluator(cfg, catalog):
    spec = cfg.get("evaluator", {"type": "synthetic", "seed": 0})
    kind = spec.get("type", "synthetic")
    if kind == "synthetic":
        return SyntheticEvaluator(int(spec.get("seed", 0)), catalog), "synthetic"
    if kind == "toy_ml":
        manifest = spec.get("dataset")
        if not manifest:
            _fail("toy_ml evaluator needs a dataset manifest {path, target, task}")
        path = manifest["path"]
        if not os.path.exists(path):
            _fail(f"dataset file not found: {path}")
        try:
            dataset = load_csv(path, manifest["target"], manifest["task"])
        except DatasetError as exc:
            _fail(str(exc))
        return ToyMLEvaluator(dataset, seed=int(spec.get("seed", 0))), dataset.name
    _fail(f"unknown evaluator type {kind!r}")


def _build_evolution_config(cfg, overrides):
    merged = dict(cfg.get("evolution", {}))
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return EvolutionConfig(**merged)
    except (TypeError, ValueError) as exc:
        _fail(f"bad evolution config: {exc}")


def _build_constraints(cfg):
    try:
        return StructuralConstraints(**cfg.get("constraints", {}))
    except (TypeError, ConfigurationError) as exc:
        _fail(f"bad constraints: {exc}")


def _build_advisor(mode, history_path, catalog):
    if mode in (None, "off"):
        return None
    if not history_path or not os.path.exists(history_path):
        _fail(f"global SA mode {mode!r} needs an existing history file")
    records, _ = HistoryStore(history_path).load()
    if not records:
        _fail("history file has no usable records")
    if mode == "suitability":
        return SuitabilityAdvisor(build_suitability_table(records))
    if mode == "metamodel":
        try:
            return MetaModelAdvisor(fit_meta_model(records))
        except HistoryError as exc:
            _fail(str(exc))
    _fail(f"unknown global SA mode {mode!r}")


def _write_convergence_csv(path, result, timing):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["generation", "wall_seconds", "best_quality", "mean_quality", "best_complexity"]
        )
        for g in result.generations:
            seconds = (
                g.evaluations * LOGICAL_SECONDS_PER_EVAL if timing == "logical" else g.wall_seconds
            )
            writer.writerow(
                [
                    g.generation,
                    f"{seconds:.6f}",
                    f"{g.best_quality:.12g}",
                    f"{g.mean_quality:.12g}",
                    g.best_complexity,
                ]
            )


def _run_one(cfg, evo_config, catalog, constraints, evaluator, dataset_id, history_path, run_id):
    sink = None
    if history_path:
        store = HistoryStore(history_path)

        def sink(event):
            if event.fitness.valid:
                store.append(
                    make_history_record(run_id, dataset_id, event.pipeline, event.fitness.quality)
                )

    advisor = _build_advisor(evo_config.global_sa_mode, history_path, catalog)
    return evolve(evo_config, evaluator, catalog, constraints, history_sink=sink, advisor=advisor)


@click.group()
@click.version_option(__version__)
def main():
    """Evolutionary pipeline optimization with sensitivity analysis."""


@main.command("evolve")
@click.option("--config", "config_path", type=click.Path(), help="JSON run configuration.")
@click.option("--seed", type=int, default=None, help="Override the evolution RNG seed.")
@click.option("--out", "out_dir", type=click.Path(), default="out")
@click.option("--timeout-seconds", type=float, default=None)
@click.option("--generations", type=int, default=None)
@click.option("--population", type=int, default=None)
@click.option("--jobs", type=int, default=1, help="Parallel evaluations (1 = serial, reproducible).")
@click.option("--local-sa/--no-local-sa", "local_sa", default=None)
@click.option("--global-sa", type=click.Choice(["off", "suitability", "metamodel"]), default=None)
@click.option("--sa-cadence", type=int, default=None)
@click.option("--sa-top-n", type=int, default=None)
@click.option("--timing", type=click.Choice(["logical", "wall"]), default="logical")
def cmd_evolve(
    config_path,
    seed,
    out_dir,
    timeout_seconds,
    generations,
    population,
    jobs,
    local_sa,
    global_sa,
    sa_cadence,
    sa_top_n,
    timing,
):
    """Run an evolutionary search and write its artifacts."""
    cfg = _load_config(config_path)
    catalog = _build_catalog(cfg)
    evaluator, dataset_id = _build_evaluator(cfg, catalog)
    evo_config = _build_evolution_config(
        cfg,
        {
            "rng_seed": seed,
            "timeout_seconds": timeout_seconds,
            "max_generations": generations,
            "population_size": population,
            "local_sa": local_sa,
            "global_sa_mode": global_sa,
            "sa_cadence_k": sa_cadence,
            "sa_top_n": sa_top_n,
        },
    )
    constraints = _build_constraints(cfg)
    history_path = cfg.get("history_path")
    os.makedirs(out_dir, exist_ok=True)

    run_id = f"run-{evo_config.rng_seed}"
    try:
        result = _run_one(
            cfg, evo_config, catalog, constraints, evaluator, dataset_id, history_path, run_id
        )
    except RuntimeError as exc:
        _fail(str(exc))

    with open(os.path.join(out_dir, "best_pipeline.json"), "w", encoding="utf-8") as fh:
        fh.write(serialize(result.best.pipeline) + "\n")
    pareto_doc = [json.loads(serialize(ind.pipeline)) for ind in result.pareto]
    with open(os.path.join(out_dir, "pareto_front.json"), "w", encoding="utf-8") as fh:
        json.dump(pareto_doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_convergence_csv(os.path.join(out_dir, "convergence.csv"), result, timing)

    click.echo(
        f"best quality {result.best.fitness.quality:.6f} "
        f"complexity {result.best.fitness.complexity} "
        f"after {len(result.history)} evaluations"
    )


@main.command("analyze")
@click.argument("pipeline_file", type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=0, help="Sweep candidate-sampling seed.")
@click.option("--budget", type=int, default=3, help="Replacement candidates per target.")
@click.option("--out", "out_dir", type=click.Path(), default="out")
def cmd_analyze(pipeline_file, config_path, seed, budget, out_dir):
    """Run a full sensitivity sweep over one pipeline document."""
    cfg = _load_config(config_path)
    catalog = _build_catalog(cfg)
    try:
        with open(pipeline_file, "r", encoding="utf-8") as fh:
            pipeline = deserialize(fh.read())
    except (OSError, ParseError) as exc:
        _fail(str(exc))
    violations = validate(pipeline, catalog)
    if violations:
        _fail("invalid pipeline: " + "; ".join(violations))

    evaluator, _ = _build_evaluator(cfg, catalog)
    report = full_sweep(pipeline, evaluator, catalog, candidate_budget=budget, seed=seed)

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "sa_report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_document() + "\n")
    with open(os.path.join(out_dir, "pipeline_annotated.dot"), "w", encoding="utf-8") as fh:
        fh.write(to_dot(pipeline, report))

    click.echo(f"baseline quality: {report.baseline_quality:.6f}")
    click.echo("top simplification suggestions (positive index = removable):")
    ranked = sorted(report.feasible_records(), key=lambda r: -r.index)
    for rec in ranked[:10]:
        target = "->".join(rec.target) if isinstance(rec.target, tuple) else rec.target
        extra = f" with {rec.replacement}" if rec.replacement is not None else ""
        click.echo(f"  {rec.kind} {rec.action} {target}{extra}: S={rec.index:+.4f}")


@main.command("suggest")
@click.argument("history_file", type=click.Path())
@click.option("--parent", "parents", multiple=True, help="Parent operation context.")
@click.option("--child", "children", multiple=True, help="Child operation context.")
@click.option("--candidates", default=None, help="Comma-separated candidate operations.")
def cmd_suggest(history_file, parents, children, candidates):
    """Print the suitability table; with context, rank candidate operations."""
    try:
        records, warnings = HistoryStore(history_file).load()
    except HistoryError as exc:
        _fail(str(exc))
    for w in warnings:
        click.echo(f"warning: {w}", err=True)
    if not records:
        _fail("history is empty")
    table = build_suitability_table(records)
    click.echo(table.to_grid())

    if parents or children:
        catalog = default_catalog()
        cand = candidates.split(",") if candidates else catalog.names()
        weights = {}
        for c in cand:
            weights[c] = sum(table.get(p, c) for p in parents) + sum(
                table.get(c, ch) for ch in children
            )
        click.echo("weighted candidates (context-aware):")
        for name in sorted(weights, key=lambda n: -weights[n]):
            click.echo(f"  {name}: {weights[name]:.4f}")


@main.command("bench")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--repeats", type=int, default=5)
@click.option("--out", "out_dir", type=click.Path(), default="out")
@click.option("--seed", type=int, default=0, help="Base seed for the paired design.")
def cmd_bench(config_path, repeats, out_dir, seed):
    """Paired benchmark: plain vs local-SA vs suitability-guided evolution."""
    if repeats < 2:
        _fail("repeats must be >= 2")
    cfg = _load_config(config_path)
    catalog = _build_catalog(cfg)
    constraints = _build_constraints(cfg)
    base = _build_evolution_config(cfg, {})
    _, dataset_id = _build_evaluator(cfg, catalog)

    # Warmup history for the suitability-guided arm: random pipelines
    # evaluated on the same landscape.
    from .space import random_pipeline

    warm_eval, _ = _build_evaluator(cfg, catalog)
    warm_records = []
    for i in range(200):
        p = random_pipeline(catalog, constraints, 10_000 + i)
        rep = warm_eval.evaluate(p)
        if rep.valid:
            warm_records.append(make_history_record("warmup", dataset_id, p, rep.quality, 0.0))
    advisor = SuitabilityAdvisor(build_suitability_table(warm_records))

    arms = {
        "plain": {"local_sa": False, "advisor": None},
        "local_sa": {"local_sa": True, "advisor": None},
        "global_sa": {"local_sa": False, "advisor": advisor},
    }
    results = {name: {"quality": [], "complexity": [], "calls": []} for name in arms}

    from dataclasses import replace as dc_replace

    for r in range(repeats):
        run_seed = seed + r
        for name, arm in arms.items():
            evaluator, _ = _build_evaluator(cfg, catalog)
            counting = CountingEvaluator(evaluator)
            evo_config = dc_replace(base, rng_seed=run_seed, local_sa=arm["local_sa"])
            result = evolve(
                evo_config, counting, catalog, constraints, advisor=arm["advisor"]
            )
            results[name]["quality"].append(result.best.fitness.quality)
            results[name]["complexity"].append(result.best.fitness.complexity)
            results[name]["calls"].append(counting.calls)

    os.makedirs(out_dir, exist_ok=True)
    summary_path = os.path.join(out_dir, "bench_summary.csv")
    with open(summary_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "dataset",
                "arm",
                "median_quality",
                "std_quality",
                "median_complexity",
                "median_evaluator_calls",
            ]
        )
        for name, data in results.items():
            writer.writerow(
                [
                    dataset_id,
                    name,
                    f"{statistics.median(data['quality']):.6f}",
                    f"{statistics.pstdev(data['quality']):.6f}",
                    statistics.median(data["complexity"]),
                    statistics.median(data["calls"]),
                ]
            )

    click.echo(f"wrote {summary_path}")
    for name, data in results.items():
        click.echo(
            f"{name}: median quality {statistics.median(data['quality']):.4f}, "
            f"median complexity {statistics.median(data['complexity'])}, "
            f"median calls {statistics.median(data['calls'])}"
        )


@main.group("history")
def cmd_history():
    """Inspect history files."""


@cmd_history.command("list")
@click.argument("history_file", type=click.Path())
def cmd_history_list(history_file):
    """List runs and record counts in a history file."""
    try:
        records, warnings = HistoryStore(history_file).load()
    except HistoryError as exc:
        _fail(str(exc))
    for w in warnings:
        click.echo(f"warning: {w}", err=True)
    counts = {}
    for r in records:
        counts[(r.run_id, r.dataset_id)] = counts.get((r.run_id, r.dataset_id), 0) + 1
    for (run_id, dataset_id), n in sorted(counts.items()):
        click.echo(f"{run_id}\t{dataset_id}\t{n} records")


@cmd_history.command("inspect")
@click.argument("history_file", type=click.Path())
@click.option("--run-id", default=None)
@click.option("--dataset-id", default=None)
@click.option("--limit", type=int, default=10)
def cmd_history_inspect(history_file, run_id, dataset_id, limit):
    """Show the best records matching a filter."""
    try:
        records = HistoryStore(history_file).query(dataset_id=dataset_id, run_id=run_id)
    except HistoryError as exc:
        _fail(str(exc))
    records.sort(key=lambda r: -r.fitness)
    for r in records[:limit]:
        click.echo(f"{r.run_id}\t{r.dataset_id}\tfitness={r.fitness:.6f}\t{serialize(r.pipeline)}")


@main.command("export-dot")
@click.argument("pipeline_file", type=click.Path())
@click.option("--out", "out_path", type=click.Path(), default=None)
def cmd_export_dot(pipeline_file, out_path):
    """Export a pipeline document as a DOT graph."""
    try:
        with open(pipeline_file, "r", encoding="utf-8") as fh:
            pipeline = deserialize(fh.read())
    except (OSError, ParseError) as exc:
        _fail(str(exc))
    dot = to_dot(pipeline)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(dot)
        click.echo(f"wrote {out_path}")
    else:
        click.echo(dot, nl=False)


if __name__ == "__main__":
    main()
