"""Meta-learning from search histories
=======================================

Builds a history of evaluated pipelines, derives the operation-pair
suitability table, fits the rank-predicting forest, and shows both
steering a mutation toward promising operations.
"""

import random

from evopipe import (
    HistoryRecord,
    SyntheticEvaluator,
    StructuralConstraints,
    build_suitability_table,
    choose_node_directed,
    default_catalog,
    fit_meta_model,
    random_pipeline,
)

catalog = default_catalog()
constraints = StructuralConstraints()
evaluator = SyntheticEvaluator(landscape_seed=11, catalog=catalog)

# history: 150 random pipelines scored on one landscape
history = []
for i in range(150):
    p = random_pipeline(catalog, constraints, i)
    history.append(HistoryRecord("demo-run", "landscape-11", p, evaluator.evaluate(p).quality))

table = build_suitability_table(history)
print("suitability table (mean normalized rank per operation pair):")
print(table.to_grid())

# directed choice: which operation fits between a scaler and the sink?
rng = random.Random(0)
draws = [
    choose_node_directed(["zscore_scaler"], ["knn"], catalog.names(), table, rng)
    for _ in range(1000)
]
print("directed-draw frequencies for the zscore_scaler -> ? -> knn slot:")
for op in sorted(set(draws), key=draws.count, reverse=True):
    print(f"  {op}: {draws.count(op) / len(draws):.1%}")

# the forest predicts a pipeline's normalized rank from its edge counts
model = fit_meta_model(history, seed=0)
best = max(history, key=lambda r: r.fitness)
worst = min(history, key=lambda r: r.fitness)
print(f"\npredicted rank of the best pipeline:  {model.predict(best.pipeline):.3f}")
print(f"predicted rank of the worst pipeline: {model.predict(worst.pipeline):.3f}")
