"""Randomized optimality certification.

Draws random sparse matrices with entries in {0, uniform(eps, 1-delta), 1}
and random instantiations of the standard query structures, then checks
that the forward maximum matches exhaustive enumeration and that the
backward assignment reproduces the claimed value when re-evaluated by the
independent evaluator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adjacency import NeuralAdjacency
from .oracle import brute_force_max, eval_tree
from .queries import ALL_STRUCTURES, standard_structures
from .solver import backward, forward
from .sparse import SparseRelationMatrix

TOLERANCE = 1e-9


@dataclass
class CertificationOutcome:
    passed: dict[str, int] = field(default_factory=dict)
    total: dict[str, int] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def random_adjacency(rng, num_entities: int, num_relations: int,
                     epsilon: float = 0.05, delta: float = 1e-4) -> NeuralAdjacency:
    matrices = []
    for r in range(num_relations):
        density = rng.uniform(0.05, 0.35)
        mask = rng.random((num_entities, num_entities)) < density
        values = rng.uniform(epsilon, 1.0 - delta, size=(num_entities, num_entities))
        ones = rng.random((num_entities, num_entities)) < 0.3
        values[ones] = 1.0
        dense = np.where(mask, values, 0.0)
        matrices.append(SparseRelationMatrix.from_dense(r, dense))
    return NeuralAdjacency(
        matrices=matrices,
        delta=delta,
        epsilon=epsilon,
        num_entities=num_entities,
        num_relations=num_relations,
    )


def certify_structures(
    seed: int,
    num_per_structure: int,
    max_entities: int = 25,
    max_relations: int = 4,
    structures=ALL_STRUCTURES,
    budget: int = 10**7,
) -> CertificationOutcome:
    templates = standard_structures()
    outcome = CertificationOutcome()
    for structure in structures:
        template = templates[structure]
        rng = np.random.default_rng([seed, ALL_STRUCTURES.index(structure) if structure in ALL_STRUCTURES else 99])
        passed = 0
        for i in range(num_per_structure):
            nv = int(rng.integers(4, max_entities + 1))
            nr = int(rng.integers(1, max_relations + 1))
            adjacency = random_adjacency(rng, nv, nr)
            anchors = rng.integers(nv, size=template.num_anchors)
            relations = rng.integers(nr, size=template.num_relations)
            tree = template.instantiate([int(a) for a in anchors], [int(r) for r in relations])

            result = forward(tree, adjacency)
            forward_max = float(result.root_vector.max())
            oracle = brute_force_max(tree, adjacency, budget=budget)

            ok = True
            if abs(forward_max - oracle.max_value) > TOLERANCE:
                outcome.failures.append(
                    f"{structure}[{i}]: forward max {forward_max!r} != brute force {oracle.max_value!r}"
                )
                ok = False
            if np.max(np.abs(result.root_vector - oracle.per_answer_max)) > TOLERANCE:
                outcome.failures.append(
                    f"{structure}[{i}]: per-answer maxima disagree with enumeration"
                )
                ok = False
            target = int(np.argmax(result.root_vector))
            assignment = backward(tree, result, adjacency, target)
            realized = eval_tree(tree, assignment, adjacency)
            if abs(realized - result.root_vector[target]) > TOLERANCE:
                outcome.failures.append(
                    f"{structure}[{i}]: backward assignment re-evaluates to {realized!r}, "
                    f"expected {result.root_vector[target]!r}"
                )
                ok = False
            passed += int(ok)
        outcome.passed[structure] = passed
        outcome.total[structure] = num_per_structure
    return outcome
