"""Query parsing, DNF/tree conversion, templates, and generation."""

import json

import numpy as np
import pytest

from qto.kg import traverse_answers
from qto.queries import (
    ALL_STRUCTURES,
    CHAIN_EXTENSIONS,
    QueryParseError,
    UnsupportedQueryError,
    generate_queries,
    parse_query,
    queries_from_jsonl,
    queries_to_jsonl,
    serialize_query,
    standard_structures,
    to_computation_tree,
    tree_from_json,
    tree_shape,
    tree_to_dnf,
    tree_to_json,
)

from conftest import random_kg

ENTS = {f"e{i}": i for i in range(10)}
# inverse-paired vocabulary: r0 -> 0, r0/inv -> 1, r1 -> 2, ...
RELS = {}
REL_LABELS = []
for _i in range(5):
    RELS[f"r{_i}"] = 2 * _i
    RELS[f"r{_i}/inv"] = 2 * _i + 1
    REL_LABELS += [f"r{_i}", f"r{_i}/inv"]


def test_parse_minimal_1p():
    q = parse_query(
        '{"answer": "v", "disjuncts": [[{"rel": "r0", "from": {"const": "e3"}, "to": {"var": "v"}}]]}',
        ENTS,
        RELS,
    )
    assert q.answer_var == "v"
    assert len(q.disjuncts) == 1 and len(q.disjuncts[0]) == 1
    atom = q.disjuncts[0][0]
    assert atom.relation == 0 and atom.source == ("const", 3) and not atom.negated


def test_parse_rejects_constant_target():
    obj = {"answer": "v", "disjuncts": [[{"rel": "r0", "from": {"var": "v"}, "to": {"const": "e1"}}]]}
    with pytest.raises(QueryParseError, match="must be a variable"):
        parse_query(obj, ENTS, RELS)


def test_parse_rejects_unknown_labels_and_unused_answer():
    with pytest.raises(QueryParseError, match="unknown relation"):
        parse_query({"answer": "v", "disjuncts": [[{"rel": "nope", "from": {"const": "e0"}, "to": {"var": "v"}}]]}, ENTS, RELS)
    with pytest.raises(QueryParseError, match="unknown entity"):
        parse_query({"answer": "v", "disjuncts": [[{"rel": "r0", "from": {"const": "nope"}, "to": {"var": "v"}}]]}, ENTS, RELS)
    with pytest.raises(QueryParseError, match="not used"):
        parse_query({"answer": "w", "disjuncts": [[{"rel": "r0", "from": {"const": "e0"}, "to": {"var": "v"}}]]}, ENTS, RELS)


def test_parse_serialize_idempotent():
    obj = {
        "answer": "v?",
        "disjuncts": [
            [
                {"rel": "r1", "from": {"const": "e2"}, "to": {"var": "v1"}},
                {"rel": "r0", "from": {"var": "v1"}, "to": {"var": "v?"}},
            ],
            [{"rel": "r3", "neg": True, "from": {"const": "e4"}, "to": {"var": "v?"}}],
        ],
    }
    labels_e = [f"e{i}" for i in range(10)]
    labels_r = REL_LABELS
    once = serialize_query(parse_query(obj, ENTS, RELS), labels_e, labels_r)
    twice = serialize_query(parse_query(once, ENTS, RELS), labels_e, labels_r)
    assert json.dumps(once, sort_keys=True) == json.dumps(twice, sort_keys=True)


def test_figure_style_pi_query_parses_and_converts():
    # two anchors constraining v1, then a projection to the answer
    obj = {
        "answer": "v?",
        "disjuncts": [[
            {"rel": "r0", "from": {"const": "e0"}, "to": {"var": "v1"}},   # won(prize, v1)
            {"rel": "r1", "from": {"const": "e1"}, "to": {"var": "v1"}},   # in_year(year, v1)
            {"rel": "r2", "from": {"var": "v1"}, "to": {"var": "v?"}},     # born_in(v1, v?)
        ]],
    }
    tree = to_computation_tree(parse_query(obj, ENTS, RELS))
    assert tree_shape(tree) == ("p", ("i", ("p", ("a",)), ("p", ("a",))))


def test_chain_converts_without_branches():
    obj = {
        "answer": "v?",
        "disjuncts": [[
            {"rel": "r0", "from": {"const": "e0"}, "to": {"var": "v1"}},
            {"rel": "r1", "from": {"var": "v1"}, "to": {"var": "v?"}},
        ]],
    }
    tree = to_computation_tree(parse_query(obj, ENTS, RELS))
    assert tree_shape(tree) == ("p", ("p", ("a",)))
    assert not any(n.kind in ("inter", "union") for n in tree)


def test_orientation_inverts_relations():
    # atom points away from the root: r0(v?, v1) must become r0^{-1}(v1, v?)
    obj = {
        "answer": "v?",
        "disjuncts": [[
            {"rel": "r0", "from": {"var": "v?"}, "to": {"var": "v1"}},
            {"rel": "r1", "from": {"const": "e0"}, "to": {"var": "v1"}},
        ]],
    }
    tree = to_computation_tree(parse_query(obj, ENTS, RELS))
    assert tree.kind == "proj" and tree.relation == 1  # inverse of r0


@pytest.mark.parametrize("name", ALL_STRUCTURES + CHAIN_EXTENSIONS)
def test_template_dnf_round_trip_reproduces_shape(name):
    template = standard_structures()[name]
    rng = np.random.default_rng(hash(name) % 2**32)
    tree = template.instantiate(
        [int(rng.integers(8)) for _ in range(template.num_anchors)],
        [int(rng.integers(6)) for _ in range(template.num_relations)],
    )
    assert tree_shape(tree) == tree_shape_of_spec(name)
    round_tripped = to_computation_tree(tree_to_dnf(tree))
    assert tree_shape(round_tripped) == tree_shape(tree)


def tree_shape_of_spec(name):
    """Hand-coded expected shapes (sorted children), independent of the
    template table."""
    a = ("a",)
    p = lambda c: ("p", c)
    n = lambda c: ("n", c)
    i = lambda *cs: ("i", *sorted(cs, key=repr))
    u = lambda *cs: ("u", *sorted(cs, key=repr))
    return {
        "1p": p(a),
        "2p": p(p(a)),
        "3p": p(p(p(a))),
        "4p": p(p(p(p(a)))),
        "5p": p(p(p(p(p(a))))),
        "2i": i(p(a), p(a)),
        "3i": i(p(a), p(a), p(a)),
        "pi": i(p(p(a)), p(a)),
        "ip": p(i(p(a), p(a))),
        "2u": u(p(a), p(a)),
        "up": p(u(p(a), p(a))),
        "2in": i(p(a), n(a)),
        "3in": i(p(a), p(a), n(a)),
        "inp": p(i(p(a), n(a))),
        "pin": i(p(p(a)), n(a)),
        "pni": i(n(p(a)), p(a)),
    }[name]


def test_mixed_union_intersection_separation():
    # (r0(c0,v1) ^ r1(c1,v1) ^ r3(v1,v?)) v (r2(c2,v1) ^ r3(v1,v?)):
    # the shared tail relation merges, v1 splits into a union whose first
    # branch is an intersection.
    obj = {
        "answer": "v?",
        "disjuncts": [
            [
                {"rel": "r0", "from": {"const": "e0"}, "to": {"var": "v1"}},
                {"rel": "r1", "from": {"const": "e1"}, "to": {"var": "v1"}},
                {"rel": "r3", "from": {"var": "v1"}, "to": {"var": "v?"}},
            ],
            [
                {"rel": "r2", "from": {"const": "e2"}, "to": {"var": "v1"}},
                {"rel": "r3", "from": {"var": "v1"}, "to": {"var": "v?"}},
            ],
        ],
    }
    tree = to_computation_tree(parse_query(obj, ENTS, RELS))
    expected = ("p", ("u", ("i", ("p", ("a",)), ("p", ("a",))), ("p", ("a",))))
    assert tree_shape(tree) == expected
    # the variable node plus its four separated copies: two union branches,
    # one of which splits further into two intersection branches
    v1_nodes = [node for node in tree if node.var == "v1"]
    assert tree.children[0].kind == "union"
    assert len(v1_nodes) - 1 == 4


def test_cyclic_query_rejected():
    obj = {
        "answer": "v?",
        "disjuncts": [[
            {"rel": "r0", "from": {"var": "v?"}, "to": {"var": "v1"}},
            {"rel": "r1", "from": {"var": "v1"}, "to": {"var": "v?"}},
        ]],
    }
    with pytest.raises(UnsupportedQueryError, match="cycl"):
        to_computation_tree(parse_query(obj, ENTS, RELS))


def test_disconnected_query_rejected():
    obj = {
        "answer": "v?",
        "disjuncts": [[
            {"rel": "r0", "from": {"const": "e0"}, "to": {"var": "v?"}},
            {"rel": "r1", "from": {"const": "e1"}, "to": {"var": "v9"}},
        ]],
    }
    with pytest.raises(UnsupportedQueryError, match="disconnected"):
        to_computation_tree(parse_query(obj, ENTS, RELS))


def test_tree_json_round_trip(toy_kg):
    template = standard_structures()["pni"]
    tree = template.instantiate([0, 1], [0, 2, 1])
    obj = tree_to_json(tree, toy_kg.entity_labels, toy_kg.relation_labels)
    back = tree_from_json(obj, toy_kg.entity_ids, toy_kg.relation_ids)
    assert tree_shape(back) == tree_shape(tree)
    assert [n.relation for n in back if n.relation is not None] == [
        n.relation for n in tree if n.relation is not None
    ]


def test_generation_deterministic_and_sound():
    kg = random_kg(11, num_entities=14, num_raw_relations=3, n_train=60, n_valid=12, n_test=12)
    templates = standard_structures()
    for name in ("1p", "2p", "2i", "up", "2in"):
        a, _ = generate_queries(kg, templates[name], 5, seed=7, split="test")
        b, _ = generate_queries(kg, templates[name], 5, seed=7, split="test")
        assert queries_to_jsonl(a, kg) == queries_to_jsonl(b, kg)
        for q in a:
            assert q.hard
            assert not (q.hard & q.easy)
            assert q.easy == traverse_answers(kg, "train+valid", q.tree)
            full = traverse_answers(kg, "full", q.tree)
            assert q.hard == full - q.easy


def test_generation_rejects_when_no_hard_answers():
    # every edge in train: nothing is ever a hard answer
    kg = random_kg(12, num_entities=8, num_raw_relations=2, n_train=40, n_valid=0, n_test=0)
    out, exhausted = generate_queries(kg, standard_structures()["1p"], 3, seed=1, split="test",
                                      max_attempts_per_query=50)
    assert out == []
    assert exhausted == 1


def test_queries_jsonl_round_trip():
    kg = random_kg(13, num_entities=12, num_raw_relations=2, n_train=50, n_valid=8, n_test=8)
    queries, _ = generate_queries(kg, standard_structures()["pi"], 4, seed=3, split="valid")
    text = queries_to_jsonl(queries, kg)
    back = queries_from_jsonl(text, kg.entity_ids, kg.relation_ids)
    assert queries_to_jsonl(back, kg) == text


def test_self_loop_atom_rejected():
    obj = {"answer": "v?", "disjuncts": [[
        {"rel": "r0", "from": {"var": "v?"}, "to": {"var": "v?"}},
        {"rel": "r1", "from": {"const": "e0"}, "to": {"var": "v?"}},
    ]]}
    with pytest.raises(UnsupportedQueryError, match="cycl"):
        to_computation_tree(parse_query(obj, ENTS, RELS))
