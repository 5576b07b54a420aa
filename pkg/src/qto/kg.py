"""Knowledge graph storage: triple loading, inverse augmentation, adjacency
indexes over the cumulative train / train+valid / full graphs, and the
set-semantics traversal used to find answers reachable through existing edges.

Triple files are UTF-8 tab-separated ``head<TAB>relation<TAB>tail`` lines.
Vocab files hold one label per line; the line number is the id.

Every raw relation ``k`` is stored as the pair ``2k`` (forward) / ``2k+1``
(inverse, label suffixed ``/inv``), so taking the inverse is an XOR of the
low bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

GRAPH_SELECTORS = ("train", "train+valid", "full")

_SPLITS_BY_SELECTOR = {
    "train": ("train",),
    "train+valid": ("train", "valid"),
    "full": ("train", "valid", "test"),
}


class KgError(Exception):
    """Raised on malformed triple/vocab input or out-of-range ids."""


def inverse_relation(relation: int) -> int:
    return relation ^ 1


@dataclass
class KnowledgeGraph:
    """Immutable after load; safe for concurrent reads."""

    entity_labels: list[str]
    relation_labels: list[str]  # post-inverse, len == 2 * raw relations
    splits: dict[str, np.ndarray]  # split -> (n, 3) int64, inverse-closed, deduped

    entity_ids: dict[str, int] = field(init=False)
    relation_ids: dict[str, int] = field(init=False)
    _out: dict[str, dict[tuple[int, int], np.ndarray]] = field(init=False)
    _edge_sets: dict[str, set[int]] = field(init=False)

    def __post_init__(self):
        self.entity_ids = {label: i for i, label in enumerate(self.entity_labels)}
        self.relation_ids = {label: i for i, label in enumerate(self.relation_labels)}
        if len(self.entity_ids) != len(self.entity_labels):
            raise KgError("duplicate entity label in vocabulary")
        if len(self.relation_ids) != len(self.relation_labels):
            raise KgError("duplicate relation label in vocabulary")
        self._out = {}
        self._edge_sets = {}
        for selector in GRAPH_SELECTORS:
            triples = self._selector_triples(selector)
            index: dict[tuple[int, int], np.ndarray] = {}
            if len(triples):
                order = np.lexsort((triples[:, 2], triples[:, 1], triples[:, 0]))
                triples = triples[order]
                keys = triples[:, 0] * self.num_relations + triples[:, 1]
                boundaries = np.flatnonzero(np.diff(keys)) + 1
                starts = np.concatenate(([0], boundaries))
                ends = np.concatenate((boundaries, [len(triples)]))
                for s, e in zip(starts, ends):
                    index[(int(triples[s, 0]), int(triples[s, 1]))] = triples[s:e, 2].copy()
            self._out[selector] = index
            self._edge_sets[selector] = set(self._encode(triples).tolist())

    @property
    def num_entities(self) -> int:
        return len(self.entity_labels)

    @property
    def num_relations(self) -> int:
        return len(self.relation_labels)

    def _selector_triples(self, selector: str) -> np.ndarray:
        if selector not in _SPLITS_BY_SELECTOR:
            raise KgError(f"unknown graph selector {selector!r}")
        parts = [self.splits[s] for s in _SPLITS_BY_SELECTOR[selector] if s in self.splits]
        parts = [p for p in parts if len(p)]
        if not parts:
            return np.empty((0, 3), dtype=np.int64)
        return np.concatenate(parts, axis=0)

    def _encode(self, triples: np.ndarray) -> np.ndarray:
        if not len(triples):
            return np.empty(0, dtype=np.int64)
        return (triples[:, 0] * self.num_relations + triples[:, 1]) * self.num_entities + triples[:, 2]

    def tails(self, head: int, relation: int, selector: str = "train") -> np.ndarray:
        """Sorted distinct tails of (head, relation) in the selected graph."""
        self._check_ids(head, relation)
        if selector not in self._out:
            raise KgError(f"unknown graph selector {selector!r}")
        return self._out[selector].get((head, relation), np.empty(0, dtype=np.int64))

    def has_edge(self, head: int, relation: int, tail: int, selector: str = "full") -> bool:
        code = (head * self.num_relations + relation) * self.num_entities + tail
        return code in self._edge_sets[selector]

    def edge_mask(self, relation: int, heads: np.ndarray, selector: str = "train") -> np.ndarray:
        """Boolean (len(heads), |V|) mask of edges under ``relation``."""
        mask = np.zeros((len(heads), self.num_entities), dtype=bool)
        for i, h in enumerate(heads):
            ts = self.tails(int(h), relation, selector)
            if len(ts):
                mask[i, ts] = True
        return mask

    def _check_ids(self, head: int, relation: int) -> None:
        if not (0 <= head < self.num_entities):
            raise KgError(f"entity id {head} out of range")
        if not (0 <= relation < self.num_relations):
            raise KgError(f"relation id {relation} out of range")


def tail_count(kg: KnowledgeGraph, head: int, relation: int) -> int:
    """Number of distinct training tails of (head, relation), floored at 1."""
    return max(1, len(kg.tails(head, relation, "train")))


def _read_vocab(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def _parse_triple_file(path, entity_ids, relation_ids, fixed_vocab) -> list[tuple[int, int, int]]:
    triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise KgError(f"{path}:{lineno}: expected head<TAB>relation<TAB>tail, got {line!r}")
            h_label, r_label, t_label = parts
            triple = []
            for label, ids, kind in ((h_label, entity_ids, "entity"), (r_label, relation_ids, "relation")):
                if label not in ids:
                    if fixed_vocab:
                        raise KgError(f"{path}:{lineno}: unknown {kind} label {label!r}")
                    ids[label] = len(ids)
                triple.append(ids[label])
            if t_label not in entity_ids:
                if fixed_vocab:
                    raise KgError(f"{path}:{lineno}: unknown entity label {t_label!r}")
                entity_ids[t_label] = len(entity_ids)
            triples.append((triple[0], triple[1], entity_ids[t_label]))
    return triples


def _with_inverses(raw: Sequence[tuple[int, int, int]]) -> np.ndarray:
    """Map raw relation k to 2k, add (t, 2k+1, h), dedupe."""
    if not raw:
        return np.empty((0, 3), dtype=np.int64)
    arr = np.asarray(raw, dtype=np.int64)
    fwd = np.stack([arr[:, 0], arr[:, 1] * 2, arr[:, 2]], axis=1)
    inv = np.stack([arr[:, 2], arr[:, 1] * 2 + 1, arr[:, 0]], axis=1)
    both = np.concatenate([fwd, inv], axis=0)
    return np.unique(both, axis=0)


def load_dataset(
    train,
    valid=None,
    test=None,
    entity_vocab=None,
    relation_vocab=None,
) -> KnowledgeGraph:
    """Load one KnowledgeGraph from up to three split files.

    Without vocab files, labels are assigned ids in first-appearance order
    across the files in the order given.
    """
    fixed = entity_vocab is not None or relation_vocab is not None
    entity_ids: dict[str, int] = {}
    relation_ids: dict[str, int] = {}
    if entity_vocab is not None:
        for i, label in enumerate(_read_vocab(entity_vocab)):
            if label in entity_ids:
                raise KgError(f"duplicate entity label {label!r} in vocab")
            entity_ids[label] = i
    if relation_vocab is not None:
        for i, label in enumerate(_read_vocab(relation_vocab)):
            if label in relation_ids:
                raise KgError(f"duplicate relation label {label!r} in vocab")
            relation_ids[label] = i

    splits = {}
    for name, path in (("train", train), ("valid", valid), ("test", test)):
        if path is None:
            continue
        splits[name] = _parse_triple_file(path, entity_ids, relation_ids, fixed)

    entity_labels = [label for label, _ in sorted(entity_ids.items(), key=lambda kv: kv[1])]
    raw_relations = [label for label, _ in sorted(relation_ids.items(), key=lambda kv: kv[1])]
    relation_labels = []
    for label in raw_relations:
        relation_labels.append(label)
        relation_labels.append(label + "/inv")

    return KnowledgeGraph(
        entity_labels=entity_labels,
        relation_labels=relation_labels,
        splits={name: _with_inverses(t) for name, t in splits.items()},
    )


def load_triples(path, entity_vocab=None, relation_vocab=None, split="train") -> KnowledgeGraph:
    """Load a single triple file into the given split."""
    kwargs = {split: path} if split != "train" else {}
    if split == "train":
        return load_dataset(path, entity_vocab=entity_vocab, relation_vocab=relation_vocab)
    return load_dataset(None, entity_vocab=entity_vocab, relation_vocab=relation_vocab, **kwargs)


def from_triples(
    triples: Iterable[tuple[int, int, int]],
    num_entities: int,
    num_raw_relations: int,
    valid: Iterable[tuple[int, int, int]] = (),
    test: Iterable[tuple[int, int, int]] = (),
    entity_labels: Optional[Sequence[str]] = None,
    relation_labels: Optional[Sequence[str]] = None,
) -> KnowledgeGraph:
    """Build a graph from raw (h, raw_r, t) id triples; relations get inverse-augmented."""
    ent = list(entity_labels) if entity_labels is not None else [f"e{i}" for i in range(num_entities)]
    raw = list(relation_labels) if relation_labels is not None else [f"r{i}" for i in range(num_raw_relations)]
    rel = []
    for label in raw:
        rel.append(label)
        rel.append(label + "/inv")
    for h, r, t in list(triples) + list(valid) + list(test):
        if not (0 <= h < num_entities and 0 <= t < num_entities):
            raise KgError(f"entity id out of range in triple ({h},{r},{t})")
        if not (0 <= r < num_raw_relations):
            raise KgError(f"relation id out of range in triple ({h},{r},{t})")
    return KnowledgeGraph(
        entity_labels=ent,
        relation_labels=rel,
        splits={
            "train": _with_inverses(list(triples)),
            "valid": _with_inverses(list(valid)),
            "test": _with_inverses(list(test)),
        },
    )


def traverse_answers(kg: KnowledgeGraph, selector: str, tree) -> set[int]:
    """Entities whose tree truth value is exactly 1 under the 0/1 adjacency
    of the selected graph.

    Set semantics mirror max-product with 0/1 entries: projection is the
    image of the child set; anti-projection is the union, over child-set
    members, of the complements of their images.
    """
    node_sets = _traverse(kg, selector, tree)
    return node_sets


def _traverse(kg: KnowledgeGraph, selector: str, node) -> set[int]:
    kind = node.kind
    if kind == "const":
        return {node.entity}
    if kind in ("proj", "anti"):
        child_set = _traverse(kg, selector, node.children[0])
        out: set[int] = set()
        if kind == "proj":
            for e in child_set:
                out.update(kg.tails(e, node.relation, selector).tolist())
        else:
            universe = set(range(kg.num_entities))
            for e in child_set:
                out.update(universe - set(kg.tails(e, node.relation, selector).tolist()))
        return out
    child_sets = [_traverse(kg, selector, c) for c in node.children]
    if kind == "inter":
        result = child_sets[0]
        for s in child_sets[1:]:
            result = result & s
        return result
    if kind == "union":
        result: set[int] = set()
        for s in child_sets:
            result |= s
        return result
    raise KgError(f"unknown node kind {kind!r}")
