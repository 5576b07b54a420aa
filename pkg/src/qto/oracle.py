"""Independent reference implementations for certifying the solver.

Everything here evaluates queries by direct recursion over explicit
variable assignments and exhaustive enumeration. No code is shared with
the propagation kernels, so a bug there cannot hide here.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .kg import KnowledgeGraph
from .queries import DNFQuery, Node


class OracleError(Exception):
    pass


def _entry(adjacency, relation: int, src: int, dst: int) -> float:
    return adjacency.relation(relation).get(src, dst)


def eval_dnf(q: DNFQuery, assignment: Mapping[str, int], adjacency) -> float:
    """Product t-norm within each disjunct, probabilistic sum across them."""
    for name in q.variables:
        if name not in assignment:
            raise OracleError(f"assignment missing variable {name!r}")
    complement = 1.0
    for conj in q.disjuncts:
        value = 1.0
        for atom in conj:
            src = atom.source[1] if atom.source[0] == "const" else assignment[atom.source[1]]
            m = _entry(adjacency, atom.relation, src, assignment[atom.target])
            value *= (1.0 - m) if atom.negated else m
        complement *= 1.0 - value
    return 1.0 - complement


def eval_tree(tree: Node, assignment: Mapping[str, int], adjacency) -> float:
    """Recursive truth value of the tree under a per-variable assignment."""

    def value(node: Node) -> float:
        if node.kind == "const":
            return 1.0
        if node.var not in assignment:
            raise OracleError(f"assignment missing variable {node.var!r}")
        e = assignment[node.var]
        if node.kind in ("proj", "anti"):
            child = node.children[0]
            if child.kind == "const":
                src = child.entity
            elif child.var in assignment:
                src = assignment[child.var]
            else:
                raise OracleError(f"assignment missing variable {child.var!r}")
            m = _entry(adjacency, node.relation, src, e)
            atom = (1.0 - m) if node.kind == "anti" else m
            return atom if child.kind == "const" else value(child) * atom
        parts = [value(c) for c in node.children]
        if node.kind == "inter":
            out = 1.0
            for p in parts:
                out *= p
            return out
        out = 1.0
        for p in parts:
            out *= 1.0 - p
        return 1.0 - out

    return value(tree)


@dataclass
class OracleResult:
    max_value: float
    argmax_assignments: list[dict[str, int]]
    per_answer_max: np.ndarray


def brute_force_max(tree: Node, adjacency, budget: int = 10**7) -> OracleResult:
    """Exhaustive enumeration over all variable assignments.

    Intersection/union copies share a variable name and are therefore bound
    together automatically. The answer variable's axis is vectorized; the
    remaining variables are enumerated lexicographically by first node id.
    """
    nv = adjacency.num_entities
    answer = tree.var
    order: list[str] = []
    for node in tree:
        if node.var is not None and node.var != answer and node.var not in order:
            order.append(node.var)

    total = nv ** (len(order) + 1)
    if total > budget:
        raise OracleError(
            f"{total} assignments exceed the budget of {budget}; use a smaller instance"
        )

    assignment: dict[str, int] = {}

    def value_vec(node: Node) -> np.ndarray:
        """Truth vector over the answer entity, other variables fixed."""
        if node.var != answer:
            raise OracleError("answer variable nested under a projection")
        if node.kind in ("proj", "anti"):
            child = node.children[0]
            if child.kind == "const":
                base, src = 1.0, child.entity
            else:
                base, src = eval_tree(child, assignment, adjacency), assignment[child.var]
            row = adjacency.relation(node.relation).dense_row(src)
            return base * ((1.0 - row) if node.kind == "anti" else row)
        parts = [value_vec(c) for c in node.children]
        if node.kind == "inter":
            out = parts[0].copy()
            for p in parts[1:]:
                out *= p
            return out
        if node.kind == "union":
            out = 1.0 - parts[0]
            for p in parts[1:]:
                out *= 1.0 - p
            return 1.0 - out
        raise OracleError("constant node cannot be a query root")

    per_answer = np.zeros(nv)
    best = -1.0
    best_assignments: list[dict[str, int]] = []
    for combo in itertools.product(range(nv), repeat=len(order)):
        for name, e in zip(order, combo):
            assignment[name] = e
        vec = value_vec(tree)
        np.maximum(per_answer, vec, out=per_answer)
        top = float(vec.max()) if nv else 0.0
        if top > best:
            best = top
            best_assignments = []
        if top == best:
            for e in np.flatnonzero(vec == best):
                full = dict(assignment)
                full[answer] = int(e)
                best_assignments.append(full)
    return OracleResult(max_value=best, argmax_assignments=best_assignments, per_answer_max=per_answer)


def check_interpretation(tree: Node, assignment: Mapping[str, int], full_kg: KnowledgeGraph) -> bool:
    """True iff the assignment makes the query true on the full graph:
    every positive atom's edge exists and every negated atom's edge is
    absent, with disjunction satisfied by any one branch."""

    def ok(node: Node) -> bool:
        if node.kind == "const":
            return True
        e = assignment[node.var]
        if node.kind in ("proj", "anti"):
            child = node.children[0]
            src = child.entity if child.kind == "const" else assignment[child.var]
            present = full_kg.has_edge(src, node.relation, e, "full")
            edge_ok = (not present) if node.kind == "anti" else present
            return edge_ok and (child.kind == "const" or ok(child))
        if node.kind == "inter":
            return all(ok(c) for c in node.children)
        return any(ok(c) for c in node.children)

    return ok(tree)
