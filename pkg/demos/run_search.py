"""Evolutionary search on a synthetic landscape
================================================

Runs the optimizer for a handful of generations on a deterministic
synthetic quality landscape and prints the convergence trace, the best
pipeline found, and its Pareto front.
"""

from evopipe import (
    EvolutionConfig,
    SyntheticEvaluator,
    StructuralConstraints,
    default_catalog,
    evolve,
    serialize,
)

catalog = default_catalog()
constraints = StructuralConstraints()

# landscape_seed picks the quality tables; rng_seed drives the search
evaluator = SyntheticEvaluator(landscape_seed=7, catalog=catalog)
config = EvolutionConfig(population_size=20, max_generations=25, rng_seed=1)

result = evolve(config, evaluator, catalog, constraints)

print("generation  best      mean      nodes")
for g in result.generations:
    print(f"{g.generation:>10}  {g.best_quality:<8.4f}  {g.mean_quality:<8.4f}  {g.best_complexity}")

print("\nbest pipeline:")
print(serialize(result.best.pipeline))

print("\npareto front (quality vs node count):")
for ind in result.pareto:
    print(f"  quality {ind.fitness.quality:.4f}  nodes {ind.fitness.complexity}")
