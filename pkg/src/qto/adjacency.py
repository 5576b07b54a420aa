"""Calibrated per-relation probability matrices.

A pluggable score source assigns every (head, relation, tail) a raw score.
Scores are turned into probabilities row by row: softmax over all tails,
multiplied by the head's training tail count, then rounded so training
edges are exactly 1 and predictions are capped at 1 - delta. Entries below
epsilon are dropped (training edges never are).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kg import KnowledgeGraph, tail_count
from .sparse import SparseRelationMatrix

DEFAULT_DELTA = 1e-4

# Effectively -inf under softmax: exp(-1e9 - max) underflows to exact 0.
NON_EDGE_SCORE = -1e9


class CalibrationError(Exception):
    pass


class EmbeddingScorer:
    """Trilinear complex scoring over entity/relation embeddings."""

    def __init__(self, entity_embeddings: np.ndarray, relation_embeddings: np.ndarray):
        self.entity = np.asarray(entity_embeddings, dtype=np.complex128)
        self.relation = np.asarray(relation_embeddings, dtype=np.complex128)
        if self.entity.ndim != 2 or self.relation.ndim != 2:
            raise CalibrationError("embeddings must be 2-d arrays")
        if self.entity.shape[1] != self.relation.shape[1]:
            raise CalibrationError(
                f"dimension mismatch: entities d={self.entity.shape[1]}, "
                f"relations d={self.relation.shape[1]}"
            )
        self._conj_entities = np.conj(self.entity)

    def score_row(self, kg: KnowledgeGraph, head: int, relation: int) -> np.ndarray:
        hr = self.entity[head] * self.relation[relation]
        return np.real(self._conj_entities @ hr)


def complex_score(src: EmbeddingScorer, head: int, relation: int, tail: int) -> float:
    """Re(sum_k r_k * h_k * conj(t_k))."""
    return float(
        np.real(np.sum(src.relation[relation] * src.entity[head] * np.conj(src.entity[tail])))
    )


class AdjacencyScorer:
    """Degenerate source: edges of the selected graph score 0, the rest
    effectively -inf, so calibration yields the 0/1 adjacency."""

    def __init__(self, selector: str = "train"):
        self.selector = selector

    def score_row(self, kg: KnowledgeGraph, head: int, relation: int) -> np.ndarray:
        scores = np.full(kg.num_entities, NON_EDGE_SCORE)
        tails = kg.tails(head, relation, self.selector)
        scores[tails] = 0.0
        return scores


class NoisyOracleScorer:
    """Test source: a large constant on full-graph edges, seeded Gaussian
    noise elsewhere. Deterministic per (head, relation) regardless of
    evaluation order."""

    def __init__(self, noise_level: float = 0.1, rng_seed: int = 0, edge_score: float = 25.0):
        if not (0.0 <= noise_level < 1.0):
            raise CalibrationError("noise_level must be in [0, 1)")
        self.noise_level = noise_level
        self.rng_seed = rng_seed
        self.edge_score = edge_score

    def score_row(self, kg: KnowledgeGraph, head: int, relation: int) -> np.ndarray:
        rng = np.random.default_rng([self.rng_seed, relation, head])
        scores = rng.standard_normal(kg.num_entities) * self.noise_level
        tails = kg.tails(head, relation, "full")
        scores[tails] = self.edge_score
        return scores


def calibrate_row(scores: np.ndarray, n_tail: int) -> np.ndarray:
    """softmax(scores) * n_tail with max-subtraction; entries may exceed 1."""
    scores = np.asarray(scores, dtype=np.float64)
    if n_tail < 1:
        raise CalibrationError("n_tail must be >= 1")
    if not np.all(np.isfinite(scores)):
        raise CalibrationError("scores must be finite")
    shifted = scores - scores.max()
    exp = np.exp(shifted)
    return exp * (n_tail / exp.sum())


def round_faithful(value: float, edge_in_train: bool, delta: float) -> float:
    """Training edges map to exactly 1; everything else is capped at 1 - delta."""
    if edge_in_train:
        return 1.0
    return min(value, 1.0 - delta)


@dataclass
class NeuralAdjacency:
    """One sparse probability matrix per relation, plus build metadata."""

    matrices: list[SparseRelationMatrix]
    delta: float
    epsilon: float
    num_entities: int
    num_relations: int
    alpha: float = 1.0

    def __post_init__(self):
        self._views: dict[float, "AlphaView"] = {}

    def relation(self, r: int) -> SparseRelationMatrix:
        return self.matrices[r]

    def alpha_view(self, alpha: float) -> "AlphaView":
        """Shared min(1, alpha * value) view; scaled matrices are cached so
        concurrent queries do not rebuild them."""
        if alpha not in self._views:
            self._views[alpha] = AlphaView(self, alpha)
        return self._views[alpha]

    def equals(self, other: "NeuralAdjacency") -> bool:
        return (
            self.num_entities == other.num_entities
            and self.num_relations == other.num_relations
            and self.delta == other.delta
            and self.epsilon == other.epsilon
            and all(a.equals(b) for a, b in zip(self.matrices, other.matrices))
        )


class AlphaView:
    """Logical view with entries min(1, alpha * value); scaled relation
    matrices are materialized lazily and cached. The base matrix is never
    modified."""

    def __init__(self, base: NeuralAdjacency, alpha: float):
        if alpha < 1.0:
            raise CalibrationError("alpha must be >= 1")
        self.base = base
        self.alpha = alpha
        self.delta = base.delta
        self.epsilon = base.epsilon
        self.num_entities = base.num_entities
        self.num_relations = base.num_relations
        self._cache: dict[int, SparseRelationMatrix] = {}

    def relation(self, r: int) -> SparseRelationMatrix:
        if self.alpha == 1.0:
            return self.base.relation(r)
        if r not in self._cache:
            self._cache[r] = self.base.relation(r).scaled(self.alpha)
        return self._cache[r]


def negation_view(adjacency: NeuralAdjacency, alpha: float) -> AlphaView:
    return adjacency.alpha_view(alpha)


def build_matrix(
    kg: KnowledgeGraph,
    src,
    epsilon: float,
    delta: float = DEFAULT_DELTA,
    chunk: int = 256,
) -> NeuralAdjacency:
    """Score, calibrate, round, and filter every (relation, head) row.

    An AdjacencyScorer source is dispatched to the direct 0/1 construction:
    its meaning is the degenerate adjacency matrix, which softmax cannot
    reproduce exactly for heads without edges.
    """
    if not (0.0 <= epsilon < 1.0):
        raise CalibrationError("epsilon must be in [0, 1)")
    if not (0.0 < delta < 0.5):
        raise CalibrationError("delta must be in (0, 0.5)")
    if isinstance(src, AdjacencyScorer):
        return adjacency_matrix(kg, src.selector, delta=delta, epsilon=epsilon)

    nv = kg.num_entities
    n_tails = np.empty(nv, dtype=np.int64)
    matrices = []
    for r in range(kg.num_relations):
        for h in range(nv):
            n_tails[h] = tail_count(kg, h, r)
        rows_acc, cols_acc, vals_acc = [], [], []
        for start in range(0, nv, chunk):
            heads = np.arange(start, min(start + chunk, nv))
            block = np.empty((len(heads), nv))
            for i, h in enumerate(heads):
                try:
                    scores = src.score_row(kg, int(h), r)
                except CalibrationError:
                    raise
                except Exception as exc:
                    raise CalibrationError(f"score source failed at relation {r}, head {h}: {exc}") from exc
                block[i] = calibrate_row(scores, int(n_tails[h]))
            train_mask = kg.edge_mask(r, heads, "train")
            block = np.minimum(block, 1.0 - delta)
            block[train_mask] = 1.0
            keep = train_mask | (block >= max(epsilon, np.finfo(np.float64).tiny))
            bi, bj = np.nonzero(keep)
            rows_acc.append(heads[bi])
            cols_acc.append(bj)
            vals_acc.append(block[bi, bj])
        matrices.append(
            SparseRelationMatrix.from_entries(
                r,
                nv,
                np.concatenate(rows_acc) if rows_acc else [],
                np.concatenate(cols_acc) if cols_acc else [],
                np.concatenate(vals_acc) if vals_acc else [],
            )
        )
    return NeuralAdjacency(
        matrices=matrices,
        delta=delta,
        epsilon=epsilon,
        num_entities=nv,
        num_relations=kg.num_relations,
    )


def adjacency_matrix(
    kg: KnowledgeGraph,
    selector: str = "train",
    delta: float = DEFAULT_DELTA,
    epsilon: float = 0.0,
) -> NeuralAdjacency:
    """The degenerate 0/1 matrix of the selected graph: every edge is 1."""
    per_relation: dict[int, tuple[list, list]] = {r: ([], []) for r in range(kg.num_relations)}
    for (h, rel), tails in kg._out[selector].items():
        per_relation[rel][0].append(np.full(len(tails), h, dtype=np.int64))
        per_relation[rel][1].append(tails)
    matrices = []
    for r in range(kg.num_relations):
        row_parts, col_parts = per_relation[r]
        rows = np.concatenate(row_parts) if row_parts else np.empty(0, dtype=np.int64)
        cols = np.concatenate(col_parts) if col_parts else np.empty(0, dtype=np.int64)
        matrices.append(
            SparseRelationMatrix.from_entries(r, kg.num_entities, rows, cols, np.ones(len(rows)))
        )
    return NeuralAdjacency(
        matrices=matrices,
        delta=delta,
        epsilon=epsilon,
        num_entities=kg.num_entities,
        num_relations=kg.num_relations,
    )
