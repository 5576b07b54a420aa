"""Command-line entry point.

Exit codes: 0 success, 1 runtime error or failed certification, 2 invalid
input or unsupported query.
"""

from __future__ import annotations

import json
import os
import sys
import time

import click

from . import adjacency as adj
from . import evaluation as ev
from . import formats, queries as qm
from .certify import certify_structures
from .kg import KgError, KnowledgeGraph, load_dataset
from .oracle import OracleError
from .solver import SolverError, backward, forward, rank_answers

_INPUT_ERRORS = (
    KgError,
    qm.QueryParseError,
    qm.UnsupportedQueryError,
    formats.FormatError,
    adj.CalibrationError,
    ev.EvalError,
    OracleError,
    SolverError,
)


def _threads(value) -> int:
    if value is not None:
        return value
    env = os.environ.get("QTO_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise click.UsageError(f"QTO_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def _load_kg(train, valid, test, entities, relations, require_triples=False) -> tuple[KnowledgeGraph, bool]:
    """Returns (graph, triples_known); vocab files alone are enough for
    label resolution when triples are not needed."""
    if train is None and require_triples:
        raise click.UsageError("--train is required")
    if train is None and (entities is None or relations is None):
        raise click.UsageError("provide --train or both --entities and --relations")
    kg = load_dataset(train, valid, test, entity_vocab=entities, relation_vocab=relations)
    return kg, train is not None


def _guard(fn):
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except _INPUT_ERRORS as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
def main():
    """Answer complex logical queries on knowledge graphs by exact
    optimization over query computation trees."""


_kg_options = [
    click.option("--train", type=click.Path(exists=True, dir_okay=False), help="training triples (TSV)"),
    click.option("--valid", type=click.Path(exists=True, dir_okay=False), help="validation triples (TSV)"),
    click.option("--test", type=click.Path(exists=True, dir_okay=False), help="test triples (TSV)"),
    click.option("--entities", type=click.Path(exists=True, dir_okay=False), help="entity vocab, one label per line"),
    click.option("--relations", type=click.Path(exists=True, dir_okay=False), help="relation vocab, one label per line"),
]


def kg_options(fn):
    for opt in reversed(_kg_options):
        fn = opt(fn)
    return fn


@main.command("build-matrix")
@kg_options
@click.option("--emb", type=click.Path(exists=True, dir_okay=False), help="QTOE embedding file")
@click.option("--scorer", type=click.Choice(["adjacency", "noisy-oracle"]), help="embedding-free score source")
@click.option("--graph", type=click.Choice(["train", "train+valid", "full"]), default="train",
              show_default=True, help="graph selector for the adjacency scorer")
@click.option("--eps", type=float, default=0.0002, show_default=True, help="sparsification threshold")
@click.option("--delta", type=float, default=adj.DEFAULT_DELTA, show_default=True, help="prediction cap 1-delta")
@click.option("--noise", type=float, default=0.1, show_default=True, help="noisy-oracle noise level")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_guard
def cmd_build_matrix(train, valid, test, entities, relations, emb, scorer, graph, eps, delta, noise, seed, out):
    """Calibrate one-hop scores into sparse relation matrices (QTOM)."""
    if emb is None and scorer is None:
        raise click.UsageError("one of --emb or --scorer is required")
    if emb is not None and scorer is not None:
        raise click.UsageError("--emb and --scorer are mutually exclusive")
    kg, _ = _load_kg(train, valid, test, entities, relations, require_triples=True)
    start = time.perf_counter()
    if scorer == "adjacency":
        matrix = adj.adjacency_matrix(kg, graph, delta=delta, epsilon=eps)
    else:
        if scorer == "noisy-oracle":
            source = adj.NoisyOracleScorer(noise_level=noise, rng_seed=seed)
        else:
            ent, rel = formats.load_embeddings(emb)
            if ent.shape[0] != kg.num_entities or rel.shape[0] != kg.num_relations:
                raise click.UsageError(
                    f"embedding shapes ({ent.shape[0]} entities, {rel.shape[0]} relations) "
                    f"do not match the graph ({kg.num_entities}, {kg.num_relations})"
                )
            source = adj.EmbeddingScorer(ent, rel)
        matrix = adj.build_matrix(kg, source, epsilon=eps, delta=delta)
    elapsed = time.perf_counter() - start
    formats.save_matrix(matrix, out)
    nnz = sum(m.nnz for m in matrix.matrices)
    total = kg.num_relations * kg.num_entities ** 2
    ratio = nnz / total if total else 0.0
    click.echo(
        f"wrote {out}: |V|={kg.num_entities} |R|={kg.num_relations} "
        f"nnz={nnz} ({100.0 * ratio:.3f}% of dense) in {elapsed:.2f}s"
    )


def _atom_report(tree, assignment, kg: KnowledgeGraph | None, labels):
    entity_labels, relation_labels = labels
    atoms = []
    for node in tree:
        if node.kind not in ("proj", "anti"):
            continue
        child = node.children[0]
        src_label = entity_labels[child.entity] if child.kind == "const" else child.var
        text = f"{relation_labels[node.relation]}({src_label}, {node.var})"
        if node.kind == "anti":
            text = "¬" + text
        present = None
        if kg is not None:
            src = child.entity if child.kind == "const" else assignment[child.var]
            present = kg.has_edge(src, node.relation, assignment[node.var], "full")
        atoms.append({"atom": text, "in_full_graph": present})
    return atoms


@main.command("answer")
@kg_options
@click.option("--matrix", "matrix_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--query", "query_path", type=click.Path(exists=True, dir_okay=False, allow_dash=True), required=True)
@click.option("--topk", type=int, default=10, show_default=True)
@click.option("--explain", is_flag=True, help="attach backward assignments to each answer")
@click.option("--target", type=str, help="explain this entity instead of the top ranks")
@click.option("--alpha", type=float, default=1.0, show_default=True, help="negation scaling, >= 1")
@click.option("--alpha-scope", type=click.Choice(["query", "negated-atoms"]), default="query", show_default=True)
@_guard
def cmd_answer(train, valid, test, entities, relations, matrix_path, query_path, topk,
               explain, target, alpha, alpha_scope):
    """Rank answers for one query; optionally explain assignments."""
    if alpha < 1.0:
        raise click.UsageError("--alpha must be >= 1")
    kg, triples_known = _load_kg(train, valid, test, entities, relations)
    matrix = formats.load_matrix(matrix_path)
    if matrix.num_entities != kg.num_entities or matrix.num_relations != kg.num_relations:
        raise click.UsageError("matrix dimensions do not match the graph/vocabulary")
    with click.open_file(query_path) as fh:
        text = fh.read()
    obj = json.loads(text)
    if "disjuncts" in obj:
        dnf = qm.parse_query(obj, kg.entity_ids, kg.relation_ids)
        tree = qm.to_computation_tree(dnf)
    else:
        tree = qm.tree_from_json(obj, kg.entity_ids, kg.relation_ids)
    result = forward(tree, matrix, alpha=alpha, alpha_scope=alpha_scope)
    ranking = rank_answers(result.root_vector)
    labels = (kg.entity_labels, kg.relation_labels)
    check_kg = kg if triples_known else None

    def describe(entity: int, value: float) -> dict:
        entry = {"answer": kg.entity_labels[entity], "value": value}
        if explain or target is not None:
            assignment = backward(tree, result, matrix, entity, alpha=alpha, alpha_scope=alpha_scope)
            entry["assignment"] = {var: kg.entity_labels[e] for var, e in assignment.items()}
            entry["atoms"] = _atom_report(tree, assignment, check_kg, labels)
        return entry

    if target is not None:
        if target not in kg.entity_ids:
            raise click.UsageError(f"unknown entity label {target!r}")
        e = kg.entity_ids[target]
        out = describe(e, float(result.root_vector[e]))
    else:
        out = {"answers": [describe(e, v) for e, v in ranking[:topk]]}
    click.echo(json.dumps(out, indent=2, ensure_ascii=False))


@main.command("gen-queries")
@kg_options
@click.option("--structures", default=",".join(qm.ALL_STRUCTURES), show_default=True,
              help="comma-separated structure names")
@click.option("--n", type=int, default=10, show_default=True, help="queries per structure")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--split", type=click.Choice(["valid", "test"]), default="test", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, allow_dash=True), required=True)
@_guard
def cmd_gen_queries(train, valid, test, entities, relations, structures, n, seed, split, out):
    """Sample grounded queries with easy/hard answer sets (JSONL)."""
    kg, _ = _load_kg(train, valid, test, entities, relations, require_triples=True)
    templates = qm.standard_structures()
    lines = []
    for name in [s.strip() for s in structures.split(",") if s.strip()]:
        if name not in templates:
            raise click.UsageError(f"unknown structure {name!r}")
        generated, exhausted = qm.generate_queries(kg, templates[name], n, seed, split=split)
        if exhausted:
            click.echo(
                f"warning: {name}: sampling budget exhausted, emitted {len(generated)}/{n}",
                err=True,
            )
        lines.append(qm.queries_to_jsonl(generated, kg))
    with click.open_file(out, "w") as fh:
        fh.write("".join(lines))
    if out != "-":
        click.echo(f"wrote {out}")


@main.command("eval")
@kg_options
@click.option("--matrix", "matrix_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--queries", "queries_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--valid-queries", "valid_queries_path", type=click.Path(exists=True, dir_okay=False),
              help="validation queries for cardinality threshold selection")
@click.option("--alpha", type=float, default=1.0, show_default=True)
@click.option("--alpha-scope", type=click.Choice(["query", "negated-atoms"]), default="query", show_default=True)
@click.option("--ks", default="1,3,10", show_default=True)
@click.option("--interpretation", is_flag=True, help="also score recovered assignments (needs triples)")
@click.option("--out-dir", type=click.Path(file_okay=False), help="write report files and figures here")
@click.option("--plot/--no-plot", default=True, show_default=True)
@click.option("--timing/--no-timing", default=True, show_default=True,
              help="include wall-clock timing (non-deterministic) in outputs")
@click.option("--threads", type=int, default=None, help="worker threads [default: QTO_THREADS or cores]")
@_guard
def cmd_eval(train, valid, test, entities, relations, matrix_path, queries_path, valid_queries_path,
             alpha, alpha_scope, ks, interpretation, out_dir, plot, timing, threads):
    """Filtered MRR/Hits@K report, optional cardinality and interpretation."""
    if alpha < 1.0:
        raise click.UsageError("--alpha must be >= 1")
    kg, triples_known = _load_kg(train, valid, test, entities, relations)
    matrix = formats.load_matrix(matrix_path)
    if matrix.num_entities != kg.num_entities or matrix.num_relations != kg.num_relations:
        raise click.UsageError("matrix dimensions do not match the graph/vocabulary")
    with open(queries_path, encoding="utf-8") as fh:
        test_queries = qm.queries_from_jsonl(fh.read(), kg.entity_ids, kg.relation_ids)
    ks_list = [int(k) for k in ks.split(",")]
    report = ev.run_eval(matrix, test_queries, ks=ks_list, alpha=alpha,
                         alpha_scope=alpha_scope, threads=_threads(threads))
    if valid_queries_path:
        with open(valid_queries_path, encoding="utf-8") as fh:
            valid_queries = qm.queries_from_jsonl(fh.read(), kg.entity_ids, kg.relation_ids)
        report.cardinality = ev.eval_cardinality(matrix, valid_queries, test_queries,
                                                 alpha=alpha, alpha_scope=alpha_scope)
    if interpretation:
        if not triples_known:
            raise click.UsageError("--interpretation needs triple files to build the full graph")
        applicable = [q for q in test_queries if q.structure in ev.INTERPRETABLE_STRUCTURES]
        if applicable:
            report.interpretation = ev.eval_interpretation(matrix, kg, applicable, ks=ks_list,
                                                           alpha=alpha, alpha_scope=alpha_scope)
    click.echo(ev.report_table(report, include_timing=timing), nl=False)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
            fh.write(ev.report_json(report, include_timing=timing))
        with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(ev.report_table(report, include_timing=timing))
        with open(os.path.join(out_dir, "report.csv"), "w", encoding="utf-8") as fh:
            fh.write(ev.report_csv(report, include_timing=timing))
        if plot:
            from .plotting import render_report_figures

            render_report_figures(report, out_dir, include_timing=timing)
        click.echo(f"wrote report files to {out_dir}")


@main.command("oracle-check")
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--num", type=int, default=100, show_default=True, help="instances per structure")
@click.option("--max-entities", type=int, default=25, show_default=True)
@click.option("--max-relations", type=int, default=4, show_default=True)
@click.option("--structures", default=",".join(qm.ALL_STRUCTURES), show_default=True)
@click.option("--budget", type=int, default=10**7, show_default=True)
@_guard
def cmd_oracle_check(seed, num, max_entities, max_relations, structures, budget):
    """Certify forward/backward optimality against exhaustive enumeration."""
    names = [s.strip() for s in structures.split(",") if s.strip()]
    for name in names:
        if name not in qm.STRUCTURE_SHAPES:
            raise click.UsageError(f"unknown structure {name!r}")
    outcome = certify_structures(seed, num, max_entities=max_entities,
                                 max_relations=max_relations, structures=names, budget=budget)
    total_pass = sum(outcome.passed.values())
    total = sum(outcome.total.values())
    for name in names:
        click.echo(f"{name}: {outcome.passed[name]}/{outcome.total[name]} optimal")
    click.echo(f"total: {total_pass}/{total} structures×seeds optimal")
    if not outcome.ok:
        for failure in outcome.failures[:20]:
            click.echo(f"FAIL {failure}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
