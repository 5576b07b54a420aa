"""Query representation and conversion.

Queries arrive in disjunctive normal form (JSON wire format) and are
converted to rooted computation trees in three steps: dependency graph
construction, merging of parallel same-relation edges across disjuncts
(distributive law), and splitting of one-to-many parents into per-branch
variable copies joined by intersection/union edges (union separated first,
then intersection).

The 14 standard benchmark structures plus 4p/5p chains are available as
parameterized templates, together with a rejection-sampling generator that
grounds instances in a knowledge graph and labels easy/hard answers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterator, Mapping, Optional, Sequence

import numpy as np

from .kg import KnowledgeGraph, inverse_relation, traverse_answers

ANSWER_VAR = "v?"

EPFO_STRUCTURES = ("1p", "2p", "3p", "2i", "3i", "pi", "ip", "2u", "up")
NEGATION_STRUCTURES = ("2in", "3in", "inp", "pin", "pni")
OOD_STRUCTURES = ("pi", "ip", "2u", "up")
ALL_STRUCTURES = EPFO_STRUCTURES + NEGATION_STRUCTURES
CHAIN_EXTENSIONS = ("4p", "5p")


class QueryParseError(Exception):
    pass


class UnsupportedQueryError(Exception):
    """Dependency graph is not a tree, or the branch structure cannot be
    separated into union/intersection splits."""


# ---------------------------------------------------------------------------
# Tree nodes
# ---------------------------------------------------------------------------

@dataclass
class Node:
    kind: str                      # const | proj | anti | inter | union
    entity: Optional[int] = None   # const only
    relation: Optional[int] = None # proj / anti only
    children: list["Node"] = field(default_factory=list)
    var: Optional[str] = None      # variable this node's value belongs to
    id: int = -1

    def __iter__(self) -> Iterator["Node"]:
        yield self
        for c in self.children:
            yield from c


def const(entity: int) -> Node:
    return Node(kind="const", entity=entity)


def proj(relation: int, child: Node, var: Optional[str] = None, negated: bool = False) -> Node:
    return Node(kind="anti" if negated else "proj", relation=relation, children=[child], var=var)


def inter(children: Sequence[Node], var: Optional[str] = None) -> Node:
    return Node(kind="inter", children=list(children), var=var)


def union(children: Sequence[Node], var: Optional[str] = None) -> Node:
    return Node(kind="union", children=list(children), var=var)


def finalize(root: Node) -> Node:
    """Assign dense preorder ids and validate structural invariants."""
    for i, node in enumerate(root):
        node.id = i
        if node.kind == "const":
            if node.children:
                raise UnsupportedQueryError("constant leaf with children")
        elif node.kind in ("proj", "anti"):
            if len(node.children) != 1:
                raise UnsupportedQueryError(f"{node.kind} node must have exactly one child")
            if node.relation is None:
                raise UnsupportedQueryError(f"{node.kind} node missing relation")
        elif node.kind in ("inter", "union"):
            if len(node.children) < 2:
                raise UnsupportedQueryError(f"{node.kind} node must have >= 2 children")
        else:
            raise UnsupportedQueryError(f"unknown node kind {node.kind!r}")
    return root


def has_negation(root: Node) -> bool:
    return any(n.kind == "anti" for n in root)


def variables(root: Node) -> list[str]:
    seen: list[str] = []
    for n in root:
        if n.var is not None and n.var not in seen:
            seen.append(n.var)
    return seen


def tree_shape(node: Node):
    """Canonical shape with branch children sorted; relation/anchor slots erased."""
    if node.kind == "const":
        return ("a",)
    if node.kind in ("proj", "anti"):
        tag = "p" if node.kind == "proj" else "n"
        return (tag, tree_shape(node.children[0]))
    tag = "i" if node.kind == "inter" else "u"
    return (tag, *sorted((tree_shape(c) for c in node.children), key=repr))


# ---------------------------------------------------------------------------
# DNF form
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Atom:
    relation: int
    negated: bool
    source: tuple[str, object]  # ("const", entity_id) or ("var", name)
    target: str                 # always a variable name
    conjunct: int


@dataclass
class DNFQuery:
    answer_var: str
    disjuncts: list[list[Atom]]

    @property
    def variables(self) -> list[str]:
        seen: list[str] = []
        for disjunct in self.disjuncts:
            for atom in disjunct:
                for name in ([atom.source[1]] if atom.source[0] == "var" else []) + [atom.target]:
                    if name not in seen:
                        seen.append(name)
        return seen


def parse_query(text_or_obj, entity_ids: Mapping[str, int], relation_ids: Mapping[str, int]) -> DNFQuery:
    obj = json.loads(text_or_obj) if isinstance(text_or_obj, (str, bytes)) else text_or_obj
    if not isinstance(obj, dict) or "answer" not in obj or "disjuncts" not in obj:
        raise QueryParseError("query must be an object with 'answer' and 'disjuncts'")
    answer = obj["answer"]
    disjuncts_in = obj["disjuncts"]
    if not isinstance(disjuncts_in, list) or not disjuncts_in:
        raise QueryParseError("'disjuncts' must be a non-empty list")
    disjuncts: list[list[Atom]] = []
    for ci, conj in enumerate(disjuncts_in):
        if not isinstance(conj, list) or not conj:
            raise QueryParseError(f"disjunct {ci} must be a non-empty list of atoms")
        atoms: list[Atom] = []
        for atom in conj:
            rel_label = atom.get("rel")
            if rel_label not in relation_ids:
                raise QueryParseError(f"unknown relation label {rel_label!r}")
            to = atom.get("to")
            if not isinstance(to, dict) or "var" not in to:
                raise QueryParseError("atom target 'to' must be a variable")
            frm = atom.get("from")
            if not isinstance(frm, dict) or ("const" not in frm and "var" not in frm):
                raise QueryParseError("atom source 'from' must be a const or var")
            if "const" in frm:
                label = frm["const"]
                if label not in entity_ids:
                    raise QueryParseError(f"unknown entity label {label!r}")
                source = ("const", entity_ids[label])
            else:
                source = ("var", frm["var"])
            atoms.append(
                Atom(
                    relation=relation_ids[rel_label],
                    negated=bool(atom.get("neg", False)),
                    source=source,
                    target=to["var"],
                    conjunct=ci,
                )
            )
        disjuncts.append(atoms)
    q = DNFQuery(answer_var=answer, disjuncts=disjuncts)
    if answer not in q.variables:
        raise QueryParseError(f"answer variable {answer!r} is not used by any atom")
    return q


def serialize_query(q: DNFQuery, entity_labels: Sequence[str], relation_labels: Sequence[str]) -> dict:
    out = {"answer": q.answer_var, "disjuncts": []}
    for conj in q.disjuncts:
        atoms = []
        for a in conj:
            frm = {"const": entity_labels[a.source[1]]} if a.source[0] == "const" else {"var": a.source[1]}
            entry = {"rel": relation_labels[a.relation], "from": frm, "to": {"var": a.target}}
            if a.negated:
                entry["neg"] = True
            atoms.append(entry)
        out["disjuncts"].append(atoms)
    return out


# ---------------------------------------------------------------------------
# DNF -> computation tree
# ---------------------------------------------------------------------------

@dataclass
class _DepEdge:
    other: object            # neighbor node key
    relation: int            # oriented child -> parent
    negated: bool
    conjuncts: frozenset


def to_computation_tree(q: DNFQuery) -> Node:
    """Three-step conversion; raises UnsupportedQueryError when the
    dependency graph is cyclic/disconnected or branches cannot be separated."""
    n_conj = len(q.disjuncts)
    # Node keys: variable names, plus ("const", idx) per constant occurrence.
    adjacency: dict[object, list[tuple[object, int, bool, int]]] = {}
    const_entities: dict[object, int] = {}

    def add(key):
        adjacency.setdefault(key, [])

    const_counter = 0
    for conj in q.disjuncts:
        for atom in conj:
            add(atom.target)
            if atom.source[0] == "const":
                skey = ("const", const_counter)
                const_entities[skey] = atom.source[1]
                const_counter += 1
            else:
                skey = atom.source[1]
            add(skey)
            # undirected; orientation fixed after rooting
            adjacency[atom.target].append((skey, atom.relation, atom.negated, atom.conjunct))
            adjacency[skey].append((atom.target, atom.relation, atom.negated, atom.conjunct))

    if q.answer_var not in adjacency:
        raise QueryParseError(f"answer variable {q.answer_var!r} is not used by any atom")

    # Root the tree with a BFS; parallel edges between the same pair of
    # variables are tolerated here and validated during merging.
    parent: dict[object, object] = {q.answer_var: None}
    order = [q.answer_var]
    seen = {q.answer_var}
    for node in order:
        for other, _, _, _ in adjacency[node]:
            if other not in seen:
                seen.add(other)
                parent[other] = node
                order.append(other)
    if len(seen) != len(adjacency):
        raise UnsupportedQueryError("query dependency graph is disconnected")

    # Oriented child edges with merged conjunct sets. An atom r(x, y) whose
    # child end is y contributes the inverse relation.
    children_edges: dict[object, list[_DepEdge]] = {key: [] for key in adjacency}
    edge_seen: set = set()
    const_counter = 0
    for conj in q.disjuncts:
        for atom in conj:
            if atom.source[0] == "const":
                skey = ("const", const_counter)
                const_counter += 1
            else:
                skey = atom.source[1]
            tkey = atom.target
            if parent.get(tkey) == skey:
                child, par, rel = tkey, skey, inverse_relation(atom.relation)
            elif parent.get(skey) == tkey:
                child, par, rel = skey, tkey, atom.relation
            else:
                raise UnsupportedQueryError(
                    f"query dependency graph is cyclic near variable {atom.target!r}"
                )
            marker = (par, child, rel, atom.negated, atom.conjunct)
            if marker in edge_seen:
                continue  # duplicate atom within one conjunct
            edge_seen.add(marker)
            merged = None
            for e in children_edges[par]:
                if e.other == child:
                    if e.relation == rel and e.negated == atom.negated:
                        merged = e
                        break
                    if isinstance(child, str):
                        raise UnsupportedQueryError(
                            f"parallel edges with different relations between "
                            f"{child!r} and {par!r} form a cycle"
                        )
            if merged is not None and isinstance(child, str):
                children_edges[par][children_edges[par].index(merged)] = replace(
                    merged, conjuncts=merged.conjuncts | {atom.conjunct}
                )
            else:
                children_edges[par].append(
                    _DepEdge(other=child, relation=rel, negated=atom.negated,
                             conjuncts=frozenset({atom.conjunct}))
                )

    def build(key, incoming: frozenset, var_name: str) -> Node:
        edges = [
            replace(e, conjuncts=e.conjuncts & incoming)
            for e in children_edges[key]
            if e.conjuncts & incoming
        ]
        covered = frozenset().union(*(e.conjuncts for e in edges)) if edges else frozenset()
        if covered != incoming:
            missing = sorted(incoming - covered)
            raise UnsupportedQueryError(
                f"variable {var_name!r} is not grounded in disjunct(s) {missing}"
            )
        groups: dict[frozenset, list[_DepEdge]] = {}
        for e in edges:
            groups.setdefault(e.conjuncts, []).append(e)

        def wrap(e: _DepEdge, branch_conjuncts: frozenset) -> Node:
            if isinstance(e.other, tuple):  # constant leaf
                child = const(const_entities[e.other])
            else:
                child_var = e.other
                child = build(e.other, branch_conjuncts, child_var)
            return proj(e.relation, child, var=var_name, negated=e.negated)

        if len(groups) == 1 and next(iter(groups)) == incoming:
            subtrees = [wrap(e, incoming) for e in edges]
            return subtrees[0] if len(subtrees) == 1 else inter(subtrees, var=var_name)

        keys = sorted(groups, key=lambda s: min(s))
        flat = [c for s in keys for c in s]
        if len(flat) != len(set(flat)):
            raise UnsupportedQueryError(
                f"branches at variable {var_name!r} mix overlapping disjunct sets; "
                "the query cannot be separated into a union/intersection tree"
            )
        branches = []
        for s in keys:
            subtrees = [wrap(e, s) for e in groups[s]]
            branches.append(subtrees[0] if len(subtrees) == 1 else inter(subtrees, var=var_name))
        return union(branches, var=var_name)

    root = build(q.answer_var, frozenset(range(n_conj)), q.answer_var)
    return finalize(root)


# ---------------------------------------------------------------------------
# Tree -> DNF (used for round trips and the reference evaluator)
# ---------------------------------------------------------------------------

def tree_to_dnf(root: Node) -> DNFQuery:
    def frag(node: Node) -> list[list[tuple[int, bool, tuple, str]]]:
        if node.kind in ("proj", "anti"):
            child = node.children[0]
            if child.kind == "const":
                source = ("const", child.entity)
                child_frags = [[]]
            else:
                source = ("var", child.var)
                child_frags = frag(child)
            return [f + [(node.relation, node.kind == "anti", source, node.var)] for f in child_frags]
        if node.kind == "inter":
            combined = [[]]
            for c in node.children:
                combined = [a + b for a in combined for b in frag(c)]
            return combined
        if node.kind == "union":
            out = []
            for c in node.children:
                out.extend(frag(c))
            return out
        raise UnsupportedQueryError("constant node cannot be a query root")

    disjuncts = [
        [Atom(relation=r, negated=n, source=s, target=t, conjunct=ci) for (r, n, s, t) in conj]
        for ci, conj in enumerate(frag(root))
    ]
    return DNFQuery(answer_var=root.var, disjuncts=disjuncts)


# ---------------------------------------------------------------------------
# Standard structures
# ---------------------------------------------------------------------------

_A = ("a",)

STRUCTURE_SHAPES: dict[str, tuple] = {
    "1p": ("p", _A),
    "2p": ("p", ("p", _A)),
    "3p": ("p", ("p", ("p", _A))),
    "4p": ("p", ("p", ("p", ("p", _A)))),
    "5p": ("p", ("p", ("p", ("p", ("p", _A))))),
    "2i": ("i", ("p", _A), ("p", _A)),
    "3i": ("i", ("p", _A), ("p", _A), ("p", _A)),
    "pi": ("i", ("p", ("p", _A)), ("p", _A)),
    "ip": ("p", ("i", ("p", _A), ("p", _A))),
    "2u": ("u", ("p", _A), ("p", _A)),
    "up": ("p", ("u", ("p", _A), ("p", _A))),
    "2in": ("i", ("p", _A), ("n", _A)),
    "3in": ("i", ("p", _A), ("p", _A), ("n", _A)),
    "inp": ("p", ("i", ("p", _A), ("n", _A))),
    "pin": ("i", ("p", ("p", _A)), ("n", _A)),
    "pni": ("i", ("n", ("p", _A)), ("p", _A)),
}


@dataclass(frozen=True)
class StructureTemplate:
    name: str
    shape: tuple
    num_anchors: int
    num_relations: int
    has_negation: bool

    def instantiate(self, anchors: Sequence[int], relations: Sequence[int]) -> Node:
        """Fill slots in depth-first order: relation before descending,
        anchors at the leaves."""
        if len(anchors) != self.num_anchors or len(relations) != self.num_relations:
            raise QueryParseError(
                f"{self.name} takes {self.num_anchors} anchors and "
                f"{self.num_relations} relations"
            )
        anchor_it = iter(anchors)
        rel_it = iter(relations)
        counter = [0]

        def build(shape, var_name: str) -> Node:
            tag = shape[0]
            if tag == "a":
                return const(next(anchor_it))
            if tag in ("p", "n"):
                rel = next(rel_it)
                child_shape = shape[1]
                if child_shape[0] == "a":
                    child = build(child_shape, var_name)
                else:
                    counter[0] += 1
                    child = build(child_shape, f"v{counter[0]}")
                return proj(rel, child, var=var_name, negated=(tag == "n"))
            children = [build(s, var_name) for s in shape[1:]]
            return (inter if tag == "i" else union)(children, var=var_name)

        return finalize(build(self.shape, ANSWER_VAR))


def _count_slots(shape) -> tuple[int, int, bool]:
    tag = shape[0]
    if tag == "a":
        return 1, 0, False
    if tag in ("p", "n"):
        a, r, n = _count_slots(shape[1])
        return a, r + 1, n or tag == "n"
    a = r = 0
    neg = False
    for s in shape[1:]:
        sa, sr, sn = _count_slots(s)
        a, r, neg = a + sa, r + sr, neg or sn
    return a, r, neg


def standard_structures(include_chains: bool = True) -> dict[str, StructureTemplate]:
    names = ALL_STRUCTURES + (CHAIN_EXTENSIONS if include_chains else ())
    out = {}
    for name in names:
        shape = STRUCTURE_SHAPES[name]
        a, r, neg = _count_slots(shape)
        out[name] = StructureTemplate(name, shape, a, r, neg)
    return out


# ---------------------------------------------------------------------------
# Tree JSON wire format
# ---------------------------------------------------------------------------

def tree_to_json(node: Node, entity_labels: Sequence[str], relation_labels: Sequence[str]) -> dict:
    if node.kind == "const":
        return {"const": entity_labels[node.entity]}
    if node.kind in ("proj", "anti"):
        return {
            "op": node.kind,
            "var": node.var,
            "rel": relation_labels[node.relation],
            "child": tree_to_json(node.children[0], entity_labels, relation_labels),
        }
    return {
        "op": node.kind,
        "var": node.var,
        "children": [tree_to_json(c, entity_labels, relation_labels) for c in node.children],
    }


def tree_from_json(obj: dict, entity_ids: Mapping[str, int], relation_ids: Mapping[str, int]) -> Node:
    def build(o) -> Node:
        if "const" in o:
            label = o["const"]
            if label not in entity_ids:
                raise QueryParseError(f"unknown entity label {label!r}")
            return const(entity_ids[label])
        op = o.get("op")
        if op in ("proj", "anti"):
            rel = o.get("rel")
            if rel not in relation_ids:
                raise QueryParseError(f"unknown relation label {rel!r}")
            return proj(relation_ids[rel], build(o["child"]), var=o.get("var"), negated=(op == "anti"))
        if op in ("inter", "union"):
            children = [build(c) for c in o.get("children", [])]
            return (inter if op == "inter" else union)(children, var=o.get("var"))
        raise QueryParseError(f"unknown tree node {o!r}")

    return finalize(build(obj))


# ---------------------------------------------------------------------------
# Query generation
# ---------------------------------------------------------------------------

@dataclass
class GeneratedQuery:
    structure: str
    tree: Node
    easy: set[int]
    hard: set[int]


def _ground(shape, answer: int, kg: KnowledgeGraph, rng, selector: str,
            anchors: list[int], relations: list[int]) -> bool:
    """Backward-walk instantiation so that ``answer`` satisfies the subtree
    in the selected graph. Appends slot values in template DFS order."""
    tag = shape[0]
    if tag == "a":
        anchors.append(answer)
        return True
    if tag == "p":
        rels = rng.permutation(kg.num_relations)
        for r in rels:
            heads = kg.tails(answer, inverse_relation(int(r)), selector)
            if len(heads):
                relations.append(int(r))
                prev = rng.choice(heads)
                return _ground(shape[1], int(prev), kg, rng, selector, anchors, relations)
        return False
    if tag == "n":
        # Absence constraint: ground the child anywhere without an edge to the answer.
        for _ in range(10):
            r = int(rng.integers(kg.num_relations))
            source = int(rng.integers(kg.num_entities))
            if not kg.has_edge(source, r, answer, selector):
                relations.append(r)
                return _ground(shape[1], source, kg, rng, selector, anchors, relations)
        return False
    if tag == "i":
        return all(_ground(s, answer, kg, rng, selector, anchors, relations) for s in shape[1:])
    if tag == "u":
        chosen = int(rng.integers(len(shape) - 1))
        for i, s in enumerate(shape[1:]):
            target = answer if i == chosen else int(rng.integers(kg.num_entities))
            if not _ground(s, target, kg, rng, selector, anchors, relations):
                return False
        return True
    raise QueryParseError(f"bad shape tag {tag!r}")


def generate_queries(
    kg: KnowledgeGraph,
    template: StructureTemplate,
    n: int,
    seed: int,
    split: str = "test",
    max_attempts_per_query: int = 200,
) -> tuple[list[GeneratedQuery], int]:
    """Sample ``n`` grounded instances with non-empty hard answer sets.

    Valid-split queries take easy answers from the train graph and hard
    from train+valid; test-split queries take easy from train+valid and
    hard from the full graph. Returns (queries, attempts_exhausted_count).
    """
    if split not in ("valid", "test"):
        raise QueryParseError("split must be 'valid' or 'test'")
    easy_selector = "train" if split == "valid" else "train+valid"
    eval_selector = "train+valid" if split == "valid" else "full"
    structure_code = (ALL_STRUCTURES + CHAIN_EXTENSIONS).index(template.name)
    rng = np.random.default_rng([seed, structure_code])
    out: list[GeneratedQuery] = []
    failures = 0
    while len(out) < n:
        made = False
        for _ in range(max_attempts_per_query):
            answer = int(rng.integers(kg.num_entities))
            anchors: list[int] = []
            relations: list[int] = []
            if not _ground(template.shape, answer, kg, rng, eval_selector, anchors, relations):
                continue
            tree = template.instantiate(anchors, relations)
            full_answers = traverse_answers(kg, eval_selector, tree)
            easy = traverse_answers(kg, easy_selector, tree)
            hard = full_answers - easy
            if not hard:
                continue
            out.append(GeneratedQuery(structure=template.name, tree=tree, easy=easy, hard=hard))
            made = True
            break
        if not made:
            failures += 1
            break
    return out, failures


def queries_to_jsonl(queries: Sequence[GeneratedQuery], kg: KnowledgeGraph) -> str:
    lines = []
    for q in queries:
        lines.append(
            json.dumps(
                {
                    "structure": q.structure,
                    "tree": tree_to_json(q.tree, kg.entity_labels, kg.relation_labels),
                    "easy": sorted(kg.entity_labels[e] for e in q.easy),
                    "hard": sorted(kg.entity_labels[e] for e in q.hard),
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")


def queries_from_jsonl(text: str, entity_ids: Mapping[str, int], relation_ids: Mapping[str, int]) -> list[GeneratedQuery]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise QueryParseError(f"line {lineno}: invalid JSON: {exc}") from exc
        out.append(
            GeneratedQuery(
                structure=obj["structure"],
                tree=tree_from_json(obj["tree"], entity_ids, relation_ids),
                easy={entity_ids[e] for e in obj.get("easy", [])},
                hard={entity_ids[e] for e in obj.get("hard", [])},
            )
        )
    return out
