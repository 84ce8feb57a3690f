"""Evolutionary optimization of ML pipeline graphs with sensitivity analysis."""

from .evaluation import (
    CountingEvaluator,
    Dataset,
    DatasetError,
    FitnessReport,
    SyntheticEvaluator,
    ToyMLEvaluator,
    load_csv,
    metric_f1,
    metric_r2,
)
from .global_sa import (
    HistoryRecord,
    HistoryStore,
    MetaModel,
    MetaModelAdvisor,
    SuitabilityAdvisor,
    SuitabilityTable,
    build_suitability_table,
    choose_node_directed,
    encode_graph,
    fit_meta_model,
    metamodel_mutation,
    normalized_rank,
    normalized_ranks,
)
from .graph import (
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
from .local_sa import (
    SAReport,
    SensitivityRecord,
    apply_simplifications,
    edge_deletion_index,
    edge_replacement_index,
    full_sweep,
    node_deletion_index,
    node_replacement_index,
    sa_evolution_hook,
    sensitivity_index,
)
from .optimizer import (
    EvolutionConfig,
    EvolveResult,
    Individual,
    crossover_subtree,
    evolve,
    mutate,
    pareto_front,
    tournament_select,
)
from .space import (
    ConfigurationError,
    OperationCatalog,
    OperationSpec,
    StructuralConstraints,
    candidate_operations,
    default_catalog,
    load_catalog,
    random_pipeline,
)

__version__ = "0.1.0"
