"""Exact complex logical query answering on knowledge graphs.

One-hop link scores are calibrated into sparse per-relation probability
matrices; a forward/backward max-product pass on the query computation
tree then finds provably optimal answers, explains them, and supports
filtered-ranking evaluation.
"""

from .adjacency import (
    AdjacencyScorer,
    EmbeddingScorer,
    NeuralAdjacency,
    NoisyOracleScorer,
    adjacency_matrix,
    build_matrix,
    calibrate_row,
    complex_score,
    negation_view,
    round_faithful,
)
from .certify import certify_structures
from .evaluation import (
    EvalReport,
    eval_cardinality,
    eval_interpretation,
    filtered_rank,
    run_eval,
)
from .formats import load_embeddings, load_matrix, save_embeddings, save_matrix
from .kg import KnowledgeGraph, load_dataset, load_triples, tail_count, traverse_answers
from .oracle import brute_force_max, check_interpretation, eval_dnf, eval_tree
from .queries import (
    DNFQuery,
    GeneratedQuery,
    Node,
    generate_queries,
    parse_query,
    serialize_query,
    standard_structures,
    to_computation_tree,
    tree_to_dnf,
)
from .solver import (
    ForwardResult,
    anti_project,
    backward,
    combine_intersection,
    combine_union,
    forward,
    predict_cardinality,
    project,
    rank_answers,
)

__version__ = "0.1.0"
