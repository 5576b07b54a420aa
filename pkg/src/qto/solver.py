"""Max-product propagation on query computation trees.

The forward pass computes, for every node, the vector of optimal subquery
truth values over all entities (product t-norm, probabilistic t-conorm).
Projection exploits sparsity: only the nonzero support of the child vector
is expanded through stored matrix rows, O(|V| * |support|). Anti-projection
is exact as well: stored entries are scanned per column and the unstored
remainder is covered by walking the child support in descending value
order.

The backward pass recovers an entity assignment achieving the optimal (or
any requested) root value, columns scanned in O(|V|) per variable. Argmax
ties always break toward the lowest entity id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adjacency import AlphaView, NeuralAdjacency
from .queries import Node, has_negation
from .sparse import SparseRelationMatrix


class SolverError(Exception):
    pass


def combine_intersection(children: list[np.ndarray]) -> np.ndarray:
    if len(children) < 2:
        raise SolverError("intersection needs >= 2 children")
    out = children[0].copy()
    for c in children[1:]:
        if len(c) != len(out):
            raise SolverError("child vector length mismatch")
        out *= c
    return out


def combine_union(children: list[np.ndarray]) -> np.ndarray:
    if len(children) < 2:
        raise SolverError("union needs >= 2 children")
    out = 1.0 - children[0]
    for c in children[1:]:
        if len(c) != len(out):
            raise SolverError("child vector length mismatch")
        out *= 1.0 - c
    return 1.0 - out


def project(child: np.ndarray, matrix: SparseRelationMatrix) -> np.ndarray:
    """out[e] = max_{e'} child[e'] * M[e', e]."""
    if len(child) != matrix.dim:
        raise SolverError("vector/matrix dimension mismatch")
    out = np.zeros(matrix.dim)
    for e in np.flatnonzero(child > 0.0):
        cols, vals = matrix.row(int(e))
        if len(cols):
            np.maximum.at(out, cols, child[e] * vals)
    return out


def anti_project(child: np.ndarray, matrix: SparseRelationMatrix) -> np.ndarray:
    """out[e] = max_{e'} child[e'] * (1 - M[e', e]).

    Stored entries contribute child * (1 - value) per column; for unstored
    entries the factor is exactly 1, so the best unstored contribution per
    column is found by scanning the child support in descending order and
    masking out each support row's stored columns.
    """
    if len(child) != matrix.dim:
        raise SolverError("vector/matrix dimension mismatch")
    out = np.zeros(matrix.dim)
    support = np.flatnonzero(child > 0.0)
    if not len(support):
        return out

    # Stored part.
    for e in support:
        cols, vals = matrix.row(int(e))
        if len(cols):
            np.maximum.at(out, cols, child[e] * (1.0 - vals))

    # Unstored part: columns still pending take the current support value.
    order = support[np.argsort(-child[support], kind="stable")]
    pending = np.ones(matrix.dim, dtype=bool)
    for e in order:
        cols, _ = matrix.row(int(e))
        if len(cols):
            blocked = pending[cols].copy()
            pending[cols] = False
            resolved = np.flatnonzero(pending)
            if len(resolved):
                np.maximum.at(out, resolved, child[e])
            pending[:] = False
            pending[cols[blocked]] = True
        else:
            resolved = np.flatnonzero(pending)
            np.maximum.at(out, resolved, child[e])
            pending[:] = False
        if not pending.any():
            break
    return out


def _scaled_view(adjacency, alpha: float):
    if hasattr(adjacency, "alpha_view"):
        return adjacency.alpha_view(alpha)
    return AlphaView(adjacency, alpha)


def _one_hot(entity: int, dim: int) -> np.ndarray:
    v = np.zeros(dim)
    v[entity] = 1.0
    return v


@dataclass
class ForwardResult:
    """Per-node optimal truth vectors keyed by node id; the root entry
    defines the answer ranking."""

    root: Node
    vectors: dict[int, np.ndarray]
    max_support: int = 0

    @property
    def root_vector(self) -> np.ndarray:
        return self.vectors[self.root.id]


def _matrix_for(node: Node, base, scaled, alpha_scope: str) -> SparseRelationMatrix:
    if scaled is None:
        return base.relation(node.relation)
    if alpha_scope == "query":
        return scaled.relation(node.relation)
    # negated-atoms scope: only anti edges see the scaled view
    return (scaled if node.kind == "anti" else base).relation(node.relation)


def forward(
    tree: Node,
    adjacency: NeuralAdjacency,
    alpha: float = 1.0,
    alpha_scope: str = "query",
) -> ForwardResult:
    """Post-order evaluation of the optimal truth vector at every node.

    When the tree contains a negated atom and alpha > 1, relation matrices
    are read through the min(1, alpha * value) view; alpha_scope selects
    whether that applies to every atom of the query or only negated ones.
    """
    if alpha_scope not in ("query", "negated-atoms"):
        raise SolverError(f"unknown alpha scope {alpha_scope!r}")
    nv = adjacency.num_entities
    scaled = _scaled_view(adjacency, alpha) if (alpha > 1.0 and has_negation(tree)) else None
    vectors: dict[int, np.ndarray] = {}
    max_support = 0

    def visit(node: Node) -> np.ndarray:
        nonlocal max_support
        if node.kind == "const":
            if not (0 <= node.entity < nv):
                raise SolverError(f"entity id {node.entity} out of range")
            vec = _one_hot(node.entity, nv)
        elif node.kind in ("proj", "anti"):
            if not (0 <= node.relation < adjacency.num_relations):
                raise SolverError(f"relation id {node.relation} out of range")
            child = visit(node.children[0])
            matrix = _matrix_for(node, adjacency, scaled, alpha_scope)
            vec = project(child, matrix) if node.kind == "proj" else anti_project(child, matrix)
        elif node.kind == "inter":
            vec = combine_intersection([visit(c) for c in node.children])
        elif node.kind == "union":
            vec = combine_union([visit(c) for c in node.children])
        else:
            raise SolverError(f"unknown node kind {node.kind!r}")
        vectors[node.id] = vec
        max_support = max(max_support, int(np.count_nonzero(vec)))
        return vec

    visit(tree)
    return ForwardResult(root=tree, vectors=vectors, max_support=max_support)


def rank_answers(root_vector: np.ndarray) -> list[tuple[int, float]]:
    """Entities sorted by value descending, ties by entity id ascending."""
    order = np.argsort(-root_vector, kind="stable")
    return [(int(e), float(root_vector[e])) for e in order]


def backward(
    tree: Node,
    result: ForwardResult,
    adjacency: NeuralAdjacency,
    target: int,
    alpha: float = 1.0,
    alpha_scope: str = "query",
) -> dict[str, int]:
    """Entity assignment realizing result.root_vector[target], keyed by
    variable name. Intersection/union copies inherit their parent's
    entity; projection children take the argmax of child-value times the
    target column (complement column for anti-projection)."""
    nv = adjacency.num_entities
    if not (0 <= target < nv):
        raise SolverError(f"target entity {target} out of range")
    scaled = _scaled_view(adjacency, alpha) if (alpha > 1.0 and has_negation(tree)) else None
    assignment: dict[str, int] = {}

    def visit(node: Node, entity: int) -> None:
        if node.kind == "const":
            return
        assignment[node.var] = entity
        if node.kind in ("inter", "union"):
            for c in node.children:
                visit(c, entity)
            return
        child = node.children[0]
        if child.kind == "const":
            return
        matrix = _matrix_for(node, adjacency, scaled, alpha_scope)
        column = matrix.dense_column(entity)
        child_vec = result.vectors[child.id]
        if node.kind == "proj":
            cand = child_vec * column
        else:
            cand = child_vec * (1.0 - column)
        visit(child, int(np.argmax(cand)))

    visit(tree, target)
    return assignment


def predict_cardinality(root_vector: np.ndarray, threshold: float) -> int:
    """Count of entries strictly above the threshold."""
    if not (0.0 <= threshold <= 1.0):
        raise SolverError("threshold must be in [0, 1]")
    return int(np.count_nonzero(root_vector > threshold))
