"""Evolutionary engine over pipeline graphs with SA hook points."""

from __future__ import annotations

import itertools
import random
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from .evaluation import FitnessReport
from .graph import (
    OperationNode,
    Pipeline,
    PipelineEditError,
    add_edge,
    delete_edge,
    delete_node,
    replace_node,
    validate,
)
from .space import OperationCatalog, StructuralConstraints, candidate_operations, random_pipeline

MUTATION_OPERATORS = ("node_change", "node_add", "node_delete", "edge_add", "edge_delete")

_uid_counter = itertools.count()


def _new_uid() -> str:
    return f"ind{next(_uid_counter)}"


@dataclass(frozen=True)
class Individual:
    pipeline: Pipeline
    fitness: Optional[FitnessReport] = None
    operator: str = "init"
    parents: tuple = ()
    uid: str = field(default_factory=_new_uid)


@dataclass
class EvolutionConfig:
    population_size: int = 20
    max_generations: int = 30
    timeout_seconds: float = 3600.0
    mutation_rates: dict = field(
        default_factory=lambda: {op: 1.0 for op in MUTATION_OPERATORS}
    )
    crossover_rate: float = 0.3
    elitism: int = 1
    tournament_k: int = 3
    local_sa: bool = False
    sa_cadence_k: int = 5
    sa_top_n: int = 3
    sa_threshold: float = 0.0
    sa_candidate_budget: int = 3
    global_sa_mode: str = "off"  # off | suitability | metamodel
    rng_seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.max_generations < 1:
            raise ValueError("max_generations must be >= 1")
        if self.timeout_seconds <= 0:
            raise ValueError("timeout_seconds must be > 0")
        if not 0.0 <= self.crossover_rate <= 1.0:
            raise ValueError("crossover_rate must be in [0, 1]")
        if any(not 0.0 <= w for w in self.mutation_rates.values()):
            raise ValueError("mutation rates must be non-negative")
        if sum(self.mutation_rates.values()) <= 0:
            raise ValueError("mutation rate weights must sum to > 0")
        if self.global_sa_mode not in ("off", "suitability", "metamodel"):
            raise ValueError(f"unknown global_sa_mode {self.global_sa_mode!r}")


@dataclass(frozen=True)
class HistoryEvent:
    generation: int
    pipeline: Pipeline
    fitness: FitnessReport
    operator: str
    parents: tuple


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    wall_seconds: float
    best_quality: float
    mean_quality: float
    best_complexity: int
    evaluations: int


@dataclass
class EvolveResult:
    best: Individual
    pareto: list
    history: list
    generations: list
    final_population: list


def dominates(a: Individual, b: Individual) -> bool:
    """a dominates b under (maximize quality, minimize complexity)."""
    aq, bq = a.fitness.quality, b.fitness.quality
    ac, bc = a.fitness.complexity, b.fitness.complexity
    return (aq >= bq and ac <= bc) and (aq > bq or ac < bc)


def pareto_front(population) -> list:
    """Non-dominated individuals, ordered by quality descending (stable)."""
    front = [
        ind
        for ind in population
        if not any(dominates(other, ind) for other in population if other is not ind)
    ]
    return sorted(front, key=lambda i: -i.fitness.quality)


def _fitness_key(ind: Individual):
    return (ind.fitness.valid, ind.fitness.quality, -ind.fitness.complexity)


def tournament_select(population, k: int, rng: random.Random) -> Individual:
    """Sample k without replacement; return the Pareto-then-quality best."""
    k = min(k, len(population))
    entrants = rng.sample(population, k)
    return max(entrants, key=_fitness_key)


# ---------------------------------------------------------------------------
# Crossover


def _ancestors(pipeline: Pipeline, node_id: str) -> set:
    result = set()
    stack = [node_id]
    while stack:
        u = stack.pop()
        for p in pipeline.parents_of(u):
            if p not in result:
                result.add(p)
                stack.append(p)
    return result


def _exclusive_ancestor_subgraph(pipeline: Pipeline, node_id: str) -> set:
    """node_id plus ancestors whose every path to the sink passes through it."""
    candidates = _ancestors(pipeline, node_id) | {node_id}
    kept = {node_id}
    changed = True
    while changed:
        changed = False
        for a in sorted(candidates - kept):
            children = pipeline.children_of(a)
            if children and all(c in kept for c in children):
                kept.add(a)
                changed = True
    return kept


def _graft(
    host: Pipeline,
    host_node: str,
    donor: Pipeline,
    donor_node: str,
    catalog: OperationCatalog,
    constraints: StructuralConstraints,
) -> Optional[Pipeline]:
    """Replace host_node's exclusive ancestor subgraph with donor_node's."""
    removed = _exclusive_ancestor_subgraph(host, host_node)
    donor_set = _exclusive_ancestor_subgraph(donor, donor_node)

    keep_nodes = [n for n in host.nodes if n.id not in removed]
    keep_edges = [(s, t) for s, t in host.edges if s not in removed and t not in removed]
    out_edges = [(s, t) for s, t in host.edges if s == host_node and t not in removed]
    if not keep_nodes:
        # whole-graph swap is not a crossover; fall back to cloning
        return None

    # Fresh ids for the grafted nodes to avoid collisions.
    existing = {n.id for n in keep_nodes}
    rename = {}
    i = 0
    for nid in sorted(donor_set):
        while f"g{i}" in existing:
            i += 1
        rename[nid] = f"g{i}"
        existing.add(f"g{i}")
        i += 1

    new_nodes = keep_nodes + [
        OperationNode(rename[n.id], n.operation, dict(n.params))
        for n in donor.nodes
        if n.id in donor_set
    ]
    new_edges = keep_edges + [
        (rename[s], rename[t]) for s, t in donor.edges if s in donor_set and t in donor_set
    ]
    root = rename[donor_node]
    for _, t in out_edges:
        if (root, t) not in new_edges:
            new_edges.append((root, t))

    offspring = Pipeline(new_nodes, new_edges)
    if validate(offspring, catalog):
        return None
    if len(offspring.nodes) > constraints.max_nodes:
        return None
    if any(
        len(offspring.parents_of(n)) > constraints.max_parents_per_node
        for n in offspring.node_ids
    ):
        return None
    return offspring


def crossover_subtree(
    parent_a: Individual,
    parent_b: Individual,
    rng: random.Random,
    catalog: OperationCatalog,
    constraints: StructuralConstraints,
) -> tuple:
    """Exchange the ancestor subgraphs of one node chosen in each parent.

    Infeasible exchanges fall back to cloning the parents.
    """
    pa, pb = parent_a.pipeline, parent_b.pipeline
    node_a = rng.choice(sorted(pa.node_ids))
    node_b = rng.choice(sorted(pb.node_ids))

    child_a = _graft(pa, node_a, pb, node_b, catalog, constraints)
    child_b = _graft(pb, node_b, pa, node_a, catalog, constraints)
    parents = (parent_a.uid, parent_b.uid)
    out_a = Individual(
        pipeline=child_a if child_a is not None else pa,
        operator="crossover" if child_a is not None else "clone",
        parents=parents,
    )
    out_b = Individual(
        pipeline=child_b if child_b is not None else pb,
        operator="crossover" if child_b is not None else "clone",
        parents=parents,
    )
    return out_a, out_b


# ---------------------------------------------------------------------------
# Mutation


def _choose_operation(pipeline, node_id, is_new, context, candidates, rng, advisor, builder):
    if advisor is not None:
        return advisor.choose_operation(
            pipeline=pipeline,
            parent_ops=context[0],
            child_ops=context[1],
            candidates=candidates,
            rng=rng,
            builder=builder,
        )
    return rng.choice(candidates)


def _mutate_once(pipeline, operator, catalog, constraints, rng, advisor):
    ops = {n.id: n.operation for n in pipeline.nodes}
    sink_id = pipeline.sink().id

    if operator == "node_change":
        node_id = rng.choice(sorted(pipeline.node_ids))
        is_sink = node_id == sink_id
        candidates = [
            op for op in candidate_operations(catalog, is_sink=is_sink) if op != ops[node_id]
        ]
        if not candidates:
            return None
        context = (
            [ops[p] for p in sorted(pipeline.parents_of(node_id))],
            [ops[c] for c in sorted(pipeline.children_of(node_id))],
        )
        builder = lambda op: replace_node(pipeline, node_id, op, catalog)
        op = _choose_operation(pipeline, node_id, False, context, candidates, rng, advisor, builder)
        return replace_node(pipeline, node_id, op, catalog)

    if operator == "node_add":
        if len(pipeline.nodes) >= constraints.max_nodes:
            return None
        variant = rng.choice(["child", "parent", "intermediate"])
        new_id = pipeline.fresh_node_id("m")

        if variant == "parent":
            target = rng.choice(sorted(pipeline.node_ids))
            if len(pipeline.parents_of(target)) >= constraints.max_parents_per_node:
                return None
            candidates = candidate_operations(catalog, is_sink=False)
            context = ([], [ops[target]])

            def builder(op):
                nodes = list(pipeline.nodes) + [
                    OperationNode(new_id, op, dict(catalog.get(op).default_params))
                ]
                return _validated(Pipeline(nodes, list(pipeline.edges) + [(new_id, target)]), catalog)

        elif variant == "child":
            # New node takes over target's outgoing edges; on the sink it
            # becomes the new sink and must be a sink-capable model.
            target = rng.choice(sorted(pipeline.node_ids))
            out = [(s, t) for s, t in pipeline.edges if s == target]
            is_sink = target == sink_id
            candidates = candidate_operations(catalog, is_sink=is_sink)
            context = ([ops[target]], [ops[t] for _, t in out])

            def builder(op):
                nodes = list(pipeline.nodes) + [
                    OperationNode(new_id, op, dict(catalog.get(op).default_params))
                ]
                edges = [(s, t) for s, t in pipeline.edges if s != target]
                edges += [(target, new_id)] + [(new_id, t) for _, t in out]
                return _validated(Pipeline(nodes, edges), catalog)

        else:  # intermediate
            if not pipeline.edges:
                return None
            s, t = rng.choice(sorted(pipeline.edges))
            candidates = candidate_operations(catalog, is_sink=False)
            context = ([ops[s]], [ops[t]])

            def builder(op):
                nodes = list(pipeline.nodes) + [
                    OperationNode(new_id, op, dict(catalog.get(op).default_params))
                ]
                edges = [e for e in pipeline.edges if e != (s, t)] + [(s, new_id), (new_id, t)]
                return _validated(Pipeline(nodes, edges), catalog)

        op = _choose_operation(pipeline, new_id, True, context, candidates, rng, advisor, builder)
        return builder(op)

    if operator == "node_delete":
        if len(pipeline.nodes) <= 1:
            return None
        node_id = rng.choice(sorted(pipeline.node_ids))
        return delete_node(pipeline, node_id, catalog)

    if operator == "edge_add":
        existing = set(pipeline.edges)
        pool = sorted(
            (a, b)
            for a in pipeline.node_ids
            for b in pipeline.node_ids
            if a != b
            and (a, b) not in existing
            and len(pipeline.parents_of(b)) < constraints.max_parents_per_node
        )
        if not pool:
            return None
        return add_edge(pipeline, rng.choice(pool), catalog)

    if operator == "edge_delete":
        if not pipeline.edges:
            return None
        return delete_edge(pipeline, rng.choice(sorted(pipeline.edges)), catalog)

    raise ValueError(f"unknown mutation operator {operator!r}")


def _validated(pipeline, catalog):
    violations = validate(pipeline, catalog)
    if violations:
        raise PipelineEditError("; ".join(violations))
    return pipeline


def mutate(
    individual: Individual,
    catalog: OperationCatalog,
    constraints: StructuralConstraints,
    rng: random.Random,
    mutation_rates: Optional[dict] = None,
    advisor=None,
    max_retries: int = 10,
) -> Individual:
    """Apply one mutation operator drawn by the configured weights.

    Infeasible attempts are retried up to max_retries, then the individual
    is returned unchanged (identity).
    """
    rates = mutation_rates or {op: 1.0 for op in MUTATION_OPERATORS}
    names = sorted(rates)
    weights = [rates[n] for n in names]
    for _ in range(max_retries):
        operator = rng.choices(names, weights=weights)[0]
        try:
            result = _mutate_once(individual.pipeline, operator, catalog, constraints, rng, advisor)
        except PipelineEditError:
            continue
        if result is None:
            continue
        return Individual(pipeline=result, operator=operator, parents=(individual.uid,))
    return Individual(
        pipeline=individual.pipeline, operator="identity", parents=(individual.uid,)
    )


# ---------------------------------------------------------------------------
# Main loop


def evolve(
    config: EvolutionConfig,
    evaluator,
    catalog: OperationCatalog,
    constraints: StructuralConstraints,
    history_sink: Optional[Callable] = None,
    advisor=None,
) -> EvolveResult:
    """Run the evolutionary loop; deterministic given the seed in serial mode."""
    from .local_sa import sa_evolution_hook

    rng = random.Random(config.rng_seed)
    start = time.monotonic()
    history = []
    gen_stats = []
    evaluations = 0
    sa_memo = set()  # pipelines already simplified to a fixed point

    def record(ind, generation):
        event = HistoryEvent(
            generation=generation,
            pipeline=ind.pipeline,
            fitness=ind.fitness,
            operator=ind.operator,
            parents=ind.parents,
        )
        history.append(event)
        if history_sink is not None:
            history_sink(event)

    def evaluate_all(individuals, generation):
        nonlocal evaluations
        out = []
        for ind in individuals:
            if ind.fitness is None:
                fitness = evaluator.evaluate(ind.pipeline)
                evaluations += 1
                ind = replace(ind, fitness=fitness)
                record(ind, generation)
            out.append(ind)
        return out

    population = [
        Individual(pipeline=random_pipeline(catalog, constraints, rng))
        for _ in range(config.population_size)
    ]
    population = evaluate_all(population, 0)
    if not any(ind.fitness.valid for ind in population):
        raise RuntimeError("all individuals of generation 0 failed evaluation")

    def snapshot(generation):
        valid = [i for i in population if i.fitness.valid]
        best = max(valid, key=_fitness_key)
        gen_stats.append(
            GenerationStats(
                generation=generation,
                wall_seconds=time.monotonic() - start,
                best_quality=best.fitness.quality,
                mean_quality=sum(i.fitness.quality for i in valid) / len(valid),
                best_complexity=best.fitness.complexity,
                evaluations=evaluations,
            )
        )

    snapshot(0)

    for generation in range(1, config.max_generations + 1):
        if time.monotonic() - start > config.timeout_seconds:
            break

        elites = sorted(population, key=_fitness_key, reverse=True)[: config.elitism]
        offspring = list(elites)
        while len(offspring) < config.population_size:
            if rng.random() < config.crossover_rate and len(population) >= 2:
                pa = tournament_select(population, config.tournament_k, rng)
                pb = tournament_select(population, config.tournament_k, rng)
                child_a, child_b = crossover_subtree(pa, pb, rng, catalog, constraints)
                children = [child_a, child_b]
            else:
                parent = tournament_select(population, config.tournament_k, rng)
                children = [Individual(pipeline=parent.pipeline, operator="clone", parents=(parent.uid,))]
            for child in children:
                if len(offspring) >= config.population_size:
                    break
                mutated = mutate(
                    child, catalog, constraints, rng, config.mutation_rates, advisor
                )
                offspring.append(mutated)

        population = evaluate_all(offspring, generation)

        if config.local_sa:
            pre_hook = population
            population = sa_evolution_hook(
                population,
                generation,
                evaluator,
                catalog,
                cadence_k=config.sa_cadence_k,
                top_n=config.sa_top_n,
                threshold=config.sa_threshold,
                candidate_budget=config.sa_candidate_budget,
                seed=config.rng_seed,
                memo=sa_memo,
            )
            for old, new in zip(pre_hook, population):
                if new is not old:
                    record(new, generation)

        snapshot(generation)

    valid = [i for i in population if i.fitness.valid]
    best = max(valid, key=_fitness_key)
    return EvolveResult(
        best=best,
        pareto=pareto_front(valid),
        history=history,
        generations=gen_stats,
        final_population=list(population),
    )
