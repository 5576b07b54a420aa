"""Shared builders: random graphs, dense reference kernels, and the
faithful-traversal oracle used by the easy-answer tests."""

from __future__ import annotations

import numpy as np
import pytest

from qto.adjacency import NeuralAdjacency
from qto.kg import KnowledgeGraph, from_triples
from qto.queries import Node
from qto.sparse import SparseRelationMatrix


def random_kg(seed: int, num_entities: int = 12, num_raw_relations: int = 3,
              n_train: int = 40, n_valid: int = 8, n_test: int = 8) -> KnowledgeGraph:
    """Random graph with disjoint train/valid/test edge sets."""
    rng = np.random.default_rng(seed)
    triples = set()
    possible = num_entities * num_raw_relations * num_entities
    if n_train + n_valid + n_test > possible // 2:
        scale = (possible // 2) / (n_train + n_valid + n_test)
        n_train = max(1, int(n_train * scale))
        n_valid = int(n_valid * scale)
        n_test = int(n_test * scale)
    target = n_train + n_valid + n_test
    while len(triples) < target:
        triples.add((
            int(rng.integers(num_entities)),
            int(rng.integers(num_raw_relations)),
            int(rng.integers(num_entities)),
        ))
    ordered = sorted(triples)
    rng.shuffle(ordered)
    return from_triples(
        ordered[:n_train],
        num_entities,
        num_raw_relations,
        valid=ordered[n_train:n_train + n_valid],
        test=ordered[n_train + n_valid:target],
    )


def random_sparse(rng, dim: int, density: float = 0.3) -> SparseRelationMatrix:
    dense = np.where(rng.random((dim, dim)) < density, rng.uniform(0.01, 1.0, (dim, dim)), 0.0)
    return SparseRelationMatrix.from_dense(0, dense)


def dense_project_ref(child: np.ndarray, dense: np.ndarray) -> np.ndarray:
    return (child[:, None] * dense).max(axis=0)


def dense_anti_ref(child: np.ndarray, dense: np.ndarray) -> np.ndarray:
    return (child[:, None] * (1.0 - dense)).max(axis=0)


def faithful_easy_answers(adjacency: NeuralAdjacency, tree: Node) -> set[int]:
    """Entities provably at truth value 1: positive atoms must follow
    value-1 entries, negated atoms must pair with unstored entries."""
    nv = adjacency.num_entities

    def visit(node: Node) -> set[int]:
        if node.kind == "const":
            return {node.entity}
        if node.kind in ("proj", "anti"):
            child_set = visit(node.children[0])
            m = adjacency.relation(node.relation)
            out: set[int] = set()
            for e in child_set:
                cols, vals = m.row(e)
                if node.kind == "proj":
                    out.update(int(c) for c, v in zip(cols, vals) if v == 1.0)
                else:
                    out.update(set(range(nv)) - set(int(c) for c in cols))
            return out
        sets = [visit(c) for c in node.children]
        if node.kind == "inter":
            result = sets[0]
            for s in sets[1:]:
                result = result & s
            return result
        result: set[int] = set()
        for s in sets:
            result |= s
        return result

    return visit(tree)


@pytest.fixture
def toy_kg() -> KnowledgeGraph:
    # a -r0-> b, a -r0-> c, b -r1-> c, c -r0-> d (train); b -r1-> d (valid); d -r1-> a (test)
    return from_triples(
        [(0, 0, 1), (0, 0, 2), (1, 1, 2), (2, 0, 3)],
        num_entities=4,
        num_raw_relations=2,
        valid=[(1, 1, 3)],
        test=[(3, 1, 0)],
        entity_labels=["a", "b", "c", "d"],
        relation_labels=["r0", "r1"],
    )
